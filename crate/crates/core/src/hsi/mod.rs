//! Hyperspectral data: cube files, band scaling, PCA, patches and
//! semi-supervised splits.

pub mod cube;
pub mod format;
pub mod patches;
pub mod pca;
pub mod pipeline;
pub mod scaling;
pub mod split;
pub mod synthetic;

pub use cube::{load_cube, HsiCube};
pub use format::{convert_raw, ArrayData, ArrayFile, Endian, RawOrder, RawType};
pub use patches::{reflect_index, PatchSet};
pub use pca::{pca_fit, PcaModel};
pub use pipeline::{prepare, DataConfig, PreparedData};
pub use scaling::{BandScaler, Normalization, GUARD_RANGE};
pub use split::{balance_labels, make_split, Balance, SemiSplit};
pub use synthetic::{synthetic_cube, SyntheticSpec};

//! Semi-supervised hyperspectral image classification with ladder networks.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense tensors, raw kernels and a reverse-mode tape.
//! - [`ladder`]: the ladder network (corrupted/clean encoders, decoder with
//!   lateral combinators, and the supervised/reconstruction costs) for dense
//!   and convolutional layer stacks.
//! - [`hsi`]: cube I/O, patch extraction, PCA, scaling and semi-supervised
//!   splits.
//! - [`train`]: Adam, the training loop, checkpoints and metrics.
//! - [`experiments`]: ablation sweeps and the benchmark protocol.
//!
//! Inner loops fan out over rayon when the default `parallel` feature is
//! enabled; see [`par`].

pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod hsi;
pub mod ladder;
pub mod par;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{DType, Real};
pub use rng::Rng;
pub use tensor::{Graph, Tensor, Var};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

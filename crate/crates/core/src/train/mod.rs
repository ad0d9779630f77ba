//! Adam training over mixed labeled/unlabeled batches, metrics,
//! checkpoints and the layer-wise denoising-autoencoder baseline.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod report;
pub mod sdae;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{peek_dtype, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainConfig, TrainMode};
pub use metrics::{evaluate, predict_indices, Metrics};
pub use report::{parse_kv, TrainReport};
pub use sdae::sdae_pretrain;
pub use trainer::{train, CheckpointPolicy, Trainer};

/// Costs of one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub c_super: f64,
    pub c_recon: f64,
    pub c_total: f64,
}

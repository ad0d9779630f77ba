use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::hsi::Balance;
use crate::ladder::LadderSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Ladder,
    /// All λ treated as zero; the decoder is never built.
    SupervisedOnly,
    /// Layer-wise denoising-autoencoder pretraining, then supervised
    /// fine-tuning of the whole encoder.
    SdaePretrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub ladder: LadderSpec,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Fraction of the final iterations over which the learning rate falls
    /// linearly to zero; absent means constant.
    #[serde(default)]
    pub lr_decay: Option<f64>,
    #[serde(default)]
    pub mode: TrainMode,
    /// Global gradient-norm limit; absent means no clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Class balancing of the labeled pool, for full-label runs.
    #[serde(default)]
    pub balance: Option<Balance>,
    /// Pretraining iterations per layer in `sdae-pretrain` mode.
    #[serde(default = "defaults::sdae_iterations")]
    pub sdae_iterations: usize,
    /// Rows per forward pass during evaluation.
    #[serde(default = "defaults::eval_chunk")]
    pub eval_chunk: usize,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.005
    }
    pub fn batch_size() -> usize {
        100
    }
    pub fn iterations() -> usize {
        15_000
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn sdae_iterations() -> usize {
        1_000
    }
    pub fn eval_chunk() -> usize {
        2_048
    }
}

impl TrainConfig {
    pub fn new(ladder: LadderSpec) -> Self {
        TrainConfig {
            ladder,
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            iterations: defaults::iterations(),
            seed: defaults::seed(),
            adam: AdamConfig::default(),
            lr_decay: None,
            mode: TrainMode::Ladder,
            grad_clip: None,
            balance: None,
            sdae_iterations: defaults::sdae_iterations(),
            eval_chunk: defaults::eval_chunk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ladder.validate()?;
        self.adam.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if let Some(f) = self.lr_decay {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("lr_decay fraction must be in (0, 1], got {f}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        if self.eval_chunk == 0 {
            return Err(Error::Config("eval_chunk must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for 0-based iteration `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        match self.lr_decay {
            None => self.learning_rate,
            Some(f) => {
                let span = (f * total as f64).max(1.0);
                let start = total as f64 - span;
                if (t as f64) < start {
                    self.learning_rate
                } else {
                    self.learning_rate * ((total - t) as f64 / span).min(1.0)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::new(LadderSpec::fc(4, &[3], 2, 0.3, vec![1.0, 1.0, 1.0]))
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = cfg();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        cfg().validate().unwrap();
    }

    #[test]
    fn linear_decay_reaches_zero_region() {
        let mut c = cfg();
        c.learning_rate = 1.0;
        c.lr_decay = Some(0.25);
        assert_eq!(c.lr_at(0, 100), 1.0);
        assert_eq!(c.lr_at(74, 100), 1.0);
        assert_eq!(c.lr_at(75, 100), 1.0);
        assert!((c.lr_at(99, 100) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = serde_json::to_value(cfg()).unwrap();
        v["noise_stdd"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<TrainConfig>(v).is_err());
    }
}

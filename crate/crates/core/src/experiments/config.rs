use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::{LambdaMode, SweepAxis};
use crate::error::{Error, Result};
use crate::hsi::{load_cube, synthetic_cube, DataConfig, HsiCube, SyntheticSpec};
use crate::train::TrainConfig;

/// Where a run's cube comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Cube and ground-truth files; relative paths resolve against the data
    /// directory.
    Files {
        data: PathBuf,
        ground_truth: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
    Synthetic(SyntheticSpec),
}

impl DatasetSpec {
    /// Absolute file paths, for `Files` datasets.
    pub fn paths(&self, data_dir: &Path) -> Option<(PathBuf, PathBuf)> {
        match self {
            DatasetSpec::Files { data, ground_truth, .. } => Some((data_dir.join(data), data_dir.join(ground_truth))),
            DatasetSpec::Synthetic(_) => None,
        }
    }

    pub fn load(&self, data_dir: &Path) -> Result<HsiCube> {
        match self {
            DatasetSpec::Files { classes, .. } => {
                let (d, g) = self.paths(data_dir).unwrap();
                for p in [&d, &g] {
                    if !p.exists() {
                        return Err(Error::MissingDataset(p.clone()));
                    }
                }
                load_cube(&d, &g, *classes)
            }
            DatasetSpec::Synthetic(s) => synthetic_cube(s),
        }
    }
}

/// Sweep section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub lambda_mode: LambdaMode,
}

pub fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

/// Complete configuration of a run: dataset, preprocessing, training and
/// an optional sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Fills the model input shape from the data settings and validates.
    pub fn resolve(&mut self, bands: usize) -> Result<()> {
        self.train.ladder.input_shape = self.data.sample_shape(bands);
        self.train.validate()
    }
}

pub const FC_PAVIA: &str = include_str!("../../configs/fc_pavia.toml");
pub const CONV_PAVIA: &str = include_str!("../../configs/conv_pavia.toml");
pub const SYNTHETIC: &str = include_str!("../../configs/synthetic.toml");

/// Shipped configurations by name.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "fc_pavia" => Some(FC_PAVIA),
        "conv_pavia" => Some(CONV_PAVIA),
        "synthetic" => Some(SYNTHETIC),
        _ => None,
    }
}

pub const PRESETS: [&str; 3] = ["fc_pavia", "conv_pavia", "synthetic"];

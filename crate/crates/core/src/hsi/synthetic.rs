use serde::{Deserialize, Serialize};

use super::cube::HsiCube;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Generator settings for a small labeled cube with Gaussian-bump class
/// spectra laid out in square spatial blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Side of the square blocks that share a class.
    pub block: usize,
    /// Width of each class bump, in bands.
    pub bump_width: f64,
    /// Per-pixel multiplicative brightness drawn from `1 ± brightness`.
    pub brightness: f64,
    /// Standard deviation of additive per-band noise.
    pub sensor_noise: f64,
    /// Fraction of blocks left as background (label 0).
    pub background: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            height: 48,
            width: 48,
            bands: 8,
            classes: 3,
            block: 8,
            bump_width: 1.5,
            brightness: 0.3,
            sensor_noise: 0.08,
            background: 0.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Noise-free spectrum of class `k`.
    pub fn class_spectrum(&self, k: usize) -> Vec<f64> {
        let span = (self.bands - 1) as f64;
        let centre = span * (k as f64 + 0.5) / self.classes as f64;
        (0..self.bands)
            .map(|b| {
                let d = b as f64 - centre;
                0.3 + 0.4 * (-d * d / (2.0 * self.bump_width * self.bump_width)).exp()
            })
            .collect()
    }
}

pub fn synthetic_cube(spec: &SyntheticSpec) -> Result<HsiCube> {
    if spec.classes == 0 || spec.classes > 255 || spec.bands < 2 || spec.block == 0 {
        return Err(Error::Config(format!("invalid synthetic cube settings {spec:?}")));
    }
    let (bh, bw) = (spec.height.div_ceil(spec.block), spec.width.div_ceil(spec.block));
    let mut rng = Rng::new(spec.seed);
    // Cycle through classes so every class gets blocks, then shuffle.
    let mut block_class: Vec<u8> = (0..bh * bw).map(|i| (i % spec.classes) as u8 + 1).collect();
    rng.shuffle(&mut block_class);
    for c in block_class.iter_mut().skip(spec.classes) {
        if rng.uniform() < spec.background {
            *c = 0;
        }
    }
    let means: Vec<Vec<f64>> = (0..spec.classes).map(|k| spec.class_spectrum(k)).collect();
    let background = vec![0.3; spec.bands];
    let mut reflectance = Vec::with_capacity(spec.height * spec.width * spec.bands);
    let mut gt = Vec::with_capacity(spec.height * spec.width);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let label = block_class[(r / spec.block) * bw + c / spec.block];
            gt.push(label);
            let mean = if label == 0 {
                &background
            } else {
                &means[label as usize - 1]
            };
            let gain = 1.0 + spec.brightness * (2.0 * rng.uniform() - 1.0);
            reflectance.extend(mean.iter().map(|&m| gain * m + spec.sensor_noise * rng.normal()));
        }
    }
    HsiCube::new(spec.height, spec.width, spec.bands, reflectance, gt, Some(spec.classes))
}

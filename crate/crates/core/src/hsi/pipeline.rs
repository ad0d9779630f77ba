use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::cube::HsiCube;
use super::patches::PatchSet;
use super::pca::{pca_fit, PcaModel};
use super::scaling::{BandScaler, Normalization};
use super::split::{make_split, SemiSplit};
use crate::error::{Error, Result};

/// Preprocessing settings shared by training, evaluation and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Odd patch side; 1 yields plain spectra.
    pub window: usize,
    pub pca_components: Option<usize>,
    pub normalization: Normalization,
    /// `None` puts every non-test labeled pixel in the labeled pool.
    pub labels_per_class: Option<usize>,
    pub test_fraction: f64,
    /// Adds background pixels to the unlabeled pool.
    pub include_background: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            window: 1,
            pca_components: None,
            normalization: Normalization::MinMax,
            labels_per_class: Some(10),
            test_fraction: 0.25,
            include_background: false,
        }
    }
}

impl DataConfig {
    /// Per-sample shape produced from a cube with `bands` channels.
    pub fn sample_shape(&self, bands: usize) -> Vec<usize> {
        let c = self.pca_components.unwrap_or(bands);
        if self.window == 1 {
            vec![c]
        } else {
            vec![self.window, self.window, c]
        }
    }
}

/// Everything a training run needs from the raw cube.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub patches: PatchSet,
    pub split: SemiSplit,
    pub pca: Option<PcaModel>,
    pub scaler: BandScaler,
}

impl PreparedData {
    /// Per-sample input shape.
    pub fn sample_shape(&self) -> Vec<usize> {
        self.patches.sample_shape()
    }
}

/// Split, then fit PCA and band scaling on training pixels only, then cut
/// patches from the transformed cube.
pub fn prepare(cube: &HsiCube, cfg: &DataConfig, seed: u64) -> Result<PreparedData> {
    let pixels = cube.pixels(cfg.include_background);
    if pixels.is_empty() {
        return Err(Error::Data("cube has no labeled pixels".into()));
    }
    let labels: Vec<Option<usize>> = pixels
        .iter()
        .map(|&(r, c)| match cube.label(r, c) {
            0 => None,
            l => Some(l as usize - 1),
        })
        .collect();
    let split = make_split(&labels, cube.classes, cfg.labels_per_class, cfg.test_fraction, seed)?;
    split.check_partition(pixels.len())?;

    let fit_set = split.train();
    let test: HashSet<usize> = split.test.iter().copied().collect();
    if let Some(i) = fit_set.iter().chain(&split.labeled_train).find(|i| test.contains(i)) {
        return Err(Error::Data(format!("test pixel {i} leaked into the fitting set")));
    }
    let fit_pixels: Vec<(usize, usize)> = fit_set.iter().map(|&i| pixels[i]).collect();

    let (cube, pca) = match cfg.pca_components {
        Some(k) => {
            let spectra: Vec<f64> = fit_pixels
                .iter()
                .flat_map(|&(r, c)| cube.spectrum(r, c).iter().copied())
                .collect();
            let model = pca_fit(&spectra, cube.bands, k)?;
            let reduced = model.transform(&cube.reflectance)?;
            (cube.with_reflectance(k, reduced)?, Some(model))
        }
        None => (cube.clone(), None),
    };
    let scaler = BandScaler::fit(&cube, &fit_pixels, cfg.normalization)?;
    let scaled = scaler.apply(&cube)?;
    let patches = PatchSet::extract(&scaled, cfg.window, &pixels)?;
    Ok(PreparedData {
        patches,
        split,
        pca,
        scaler,
    })
}

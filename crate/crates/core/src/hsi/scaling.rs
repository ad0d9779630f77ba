use serde::{Deserialize, Serialize};

use super::cube::HsiCube;
use crate::error::{Error, Result};

/// Lower and upper clip applied to min-max scaled values of pixels outside
/// the fitting set.
pub const GUARD_RANGE: (f64, f64) = (-0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    MinMax,
    ZScore,
}

/// Per-band affine map `(x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScaler {
    pub kind: Normalization,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl BandScaler {
    /// Fits on the spectra at `pixels` only.
    pub fn fit(cube: &HsiCube, pixels: &[(usize, usize)], kind: Normalization) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Data("cannot fit band scaling on zero pixels".into()));
        }
        let b = cube.bands;
        let (mut offset, mut scale) = (vec![0.0; b], vec![1.0; b]);
        match kind {
            Normalization::MinMax => {
                let mut lo = vec![f64::INFINITY; b];
                let mut hi = vec![f64::NEG_INFINITY; b];
                for &(r, c) in pixels {
                    for (k, &v) in cube.spectrum(r, c).iter().enumerate() {
                        lo[k] = lo[k].min(v);
                        hi[k] = hi[k].max(v);
                    }
                }
                for k in 0..b {
                    offset[k] = lo[k];
                    scale[k] = if hi[k] > lo[k] { hi[k] - lo[k] } else { 1.0 };
                }
            }
            Normalization::ZScore => {
                let n = pixels.len() as f64;
                for &(r, c) in pixels {
                    for (k, &v) in cube.spectrum(r, c).iter().enumerate() {
                        offset[k] += v / n;
                    }
                }
                let mut var = vec![0.0; b];
                for &(r, c) in pixels {
                    for (k, &v) in cube.spectrum(r, c).iter().enumerate() {
                        var[k] += (v - offset[k]).powi(2) / n;
                    }
                }
                for k in 0..b {
                    scale[k] = if var[k] > 0.0 { var[k].sqrt() } else { 1.0 };
                }
            }
        }
        Ok(BandScaler { kind, offset, scale })
    }

    /// Scales every pixel. Min-max output is clipped to [`GUARD_RANGE`].
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        let b = cube.bands;
        if b != self.offset.len() {
            return Err(Error::Dimension(format!(
                "scaler fitted on {} bands applied to {b}",
                self.offset.len()
            )));
        }
        let data = cube
            .reflectance
            .chunks(b)
            .flat_map(|px| {
                px.iter().enumerate().map(|(k, &v)| {
                    let s = (v - self.offset[k]) / self.scale[k];
                    match self.kind {
                        Normalization::MinMax => s.clamp(GUARD_RANGE.0, GUARD_RANGE.1),
                        Normalization::ZScore => s,
                    }
                })
            })
            .collect();
        cube.with_reflectance(b, data)
    }
}

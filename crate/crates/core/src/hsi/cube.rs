use std::path::Path;

use super::format::{ArrayData, ArrayFile};
use crate::error::{Error, Result};

/// A hyperspectral image with its ground-truth label map.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// `height × width × bands`, row-major.
    pub reflectance: Vec<f64>,
    /// `height × width`; 0 is background, classes are `1..=classes`.
    pub ground_truth: Vec<u8>,
    pub classes: usize,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        reflectance: Vec<f64>,
        ground_truth: Vec<u8>,
        classes: Option<usize>,
    ) -> Result<Self> {
        if height * width * bands != reflectance.len() || height * width != ground_truth.len() {
            return Err(Error::Dimension(format!(
                "cube {height}x{width}x{bands} got {} reflectance and {} label values",
                reflectance.len(),
                ground_truth.len()
            )));
        }
        if let Some(i) = reflectance.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reflectance element {i}")));
        }
        let max_label = ground_truth.iter().copied().max().unwrap_or(0) as usize;
        let classes = classes.unwrap_or(max_label);
        if max_label > classes {
            return Err(Error::Data(format!(
                "ground truth contains label {max_label} but only {classes} classes are declared"
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            reflectance,
            ground_truth,
            classes,
        })
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let off = (row * self.width + col) * self.bands;
        &self.reflectance[off..off + self.bands]
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.ground_truth[row * self.width + col]
    }

    pub fn labeled_count(&self) -> usize {
        self.ground_truth.iter().filter(|&&l| l > 0).count()
    }

    /// Pixel coordinates in row-major order, labeled ones only unless
    /// `include_background`.
    pub fn pixels(&self, include_background: bool) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| include_background || self.label(r, c) > 0)
            .collect()
    }

    /// Replaces the spectra while keeping geometry and labels.
    pub fn with_reflectance(&self, bands: usize, reflectance: Vec<f64>) -> Result<Self> {
        HsiCube::new(
            self.height,
            self.width,
            bands,
            reflectance,
            self.ground_truth.clone(),
            Some(self.classes),
        )
    }

    pub fn data_file(&self) -> ArrayFile {
        ArrayFile {
            dims: vec![self.height, self.width, self.bands],
            data: ArrayData::F64(self.reflectance.clone()),
        }
    }

    pub fn gt_file(&self) -> ArrayFile {
        ArrayFile {
            dims: vec![self.height, self.width],
            data: ArrayData::U8(self.ground_truth.clone()),
        }
    }

    pub fn save(&self, data_path: &Path, gt_path: &Path) -> Result<()> {
        self.data_file().write(data_path)?;
        self.gt_file().write(gt_path)
    }
}

/// Reads and validates a reflectance cube and its ground-truth map.
///
/// Values are returned unscaled; band scaling is fitted later on training
/// pixels only (see [`super::scaling`]).
pub fn load_cube(data_path: &Path, gt_path: &Path, classes: Option<usize>) -> Result<HsiCube> {
    let data = ArrayFile::read(data_path)?;
    let gt = ArrayFile::read(gt_path)?;
    if data.dims.len() != 3 {
        return Err(Error::format(
            data_path,
            format!("reflectance must be height x width x bands, got dims {:?}", data.dims),
        ));
    }
    if gt.dims.len() != 2 || gt.dims[..] != data.dims[..2] {
        return Err(Error::Dimension(format!(
            "ground truth dims {:?} do not match cube dims {:?}",
            gt.dims, data.dims
        )));
    }
    let labels = match gt.data {
        ArrayData::U8(v) => v,
        other => {
            return Err(Error::format(
                gt_path,
                format!("ground truth must be uint8, got {:?}", other.dtype()),
            ))
        }
    };
    let reflectance = match &data.data {
        ArrayData::U8(_) | ArrayData::F32(_) | ArrayData::F64(_) => data.data.to_f64(),
    };
    HsiCube::new(data.dims[0], data.dims[1], data.dims[2], reflectance, labels, classes)
}

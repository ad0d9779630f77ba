use super::cube::HsiCube;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Reflect an out-of-range coordinate back into `0..n` without repeating
/// the edge sample (`-1 → 1`, `n → n-2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Square windows centred on selected pixels of a cube.
///
/// Windows are cut lazily from a mirror-padded copy of the cube, so the
/// full `n × w × w × c` array is only built by [`PatchSet::to_array`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub window: usize,
    pub bands: usize,
    pub classes: usize,
    /// Patch centres, `(row, col)`.
    pub centers: Vec<(usize, usize)>,
    /// Class index `0..classes`, or `None` for background pixels.
    pub labels: Vec<Option<usize>>,
    padded: Vec<f64>,
    padded_w: usize,
}

impl PatchSet {
    pub fn extract(cube: &HsiCube, window: usize, centers: &[(usize, usize)]) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "window must be an odd integer >= 1, got {window}"
            )));
        }
        let r = (window / 2) as isize;
        let (ph, pw) = (cube.height + window - 1, cube.width + window - 1);
        let mut padded = Vec::with_capacity(ph * pw * cube.bands);
        for y in 0..ph as isize {
            let sy = reflect_index(y - r, cube.height);
            for x in 0..pw as isize {
                let sx = reflect_index(x - r, cube.width);
                padded.extend_from_slice(cube.spectrum(sy, sx));
            }
        }
        let labels = centers
            .iter()
            .map(|&(row, col)| match cube.label(row, col) {
                0 => None,
                l => Some(l as usize - 1),
            })
            .collect();
        Ok(PatchSet {
            window,
            bands: cube.bands,
            classes: cube.classes,
            centers: centers.to_vec(),
            labels,
            padded,
            padded_w: pw,
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Per-sample shape: `[bands]` for a 1-pixel window, else `[w, w, bands]`.
    pub fn sample_shape(&self) -> Vec<usize> {
        if self.window == 1 {
            vec![self.bands]
        } else {
            vec![self.window, self.window, self.bands]
        }
    }

    pub fn sample_len(&self) -> usize {
        self.window * self.window * self.bands
    }

    fn write_patch<T: Real>(&self, i: usize, out: &mut Vec<T>) {
        let (row, col) = self.centers[i];
        let span = self.window * self.bands;
        for dy in 0..self.window {
            let off = ((row + dy) * self.padded_w + col) * self.bands;
            out.extend(self.padded[off..off + span].iter().map(|&v| T::lit(v)));
        }
    }

    pub fn patch(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sample_len());
        self.write_patch(i, &mut out);
        out
    }

    /// Stacks the patches at `indices` into a batch tensor of shape
    /// `[n] ++ sample_shape`.
    pub fn gather<T: Real>(&self, indices: &[usize], sample_shape: &[usize]) -> Result<Tensor<T>> {
        if sample_shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::Dimension(format!(
                "patches of {} values cannot feed input shape {sample_shape:?}",
                self.sample_len()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            self.write_patch(i, &mut data);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(sample_shape);
        Tensor::new(&shape, data)
    }

    pub fn to_array(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.sample_len());
        for i in 0..self.len() {
            self.write_patch(i, &mut out);
        }
        out
    }

    /// Class index of a labeled patch.
    pub fn class_of(&self, i: usize) -> Result<usize> {
        self.labels[i].ok_or_else(|| Error::Data(format!("patch {i} is background")))
    }
}

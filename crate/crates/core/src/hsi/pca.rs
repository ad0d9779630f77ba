use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Principal axes of a set of spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `c × k`, row-major; column `j` is the `j`-th principal axis.
    pub components: Vec<f64>,
    /// Sample variance along each axis, non-increasing.
    pub explained_variance: Vec<f64>,
    pub input_dim: usize,
    pub k: usize,
}

/// Eigendecomposition of the sample covariance of `spectra` (`n × c`,
/// row-major), keeping the `k` leading axes. Each axis is signed so that
/// its largest-magnitude entry is positive.
pub fn pca_fit(spectra: &[f64], c: usize, k: usize) -> Result<PcaModel> {
    if c == 0 || !spectra.len().is_multiple_of(c) {
        return Err(Error::Dimension(format!(
            "{} values are not rows of {c}",
            spectra.len()
        )));
    }
    let n = spectra.len() / c;
    if k == 0 || k > c {
        return Err(Error::Config(format!("PCA needs 1 <= k <= {c} components, got {k}")));
    }
    if n < 2 {
        return Err(Error::Data("PCA needs at least two samples".into()));
    }
    let mut mean = vec![0.0; c];
    for row in spectra.chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(c, c);
    let mut centered = vec![0.0; c];
    for row in spectra.chunks(c) {
        for j in 0..c {
            centered[j] = row[j] - mean[j];
        }
        for a in 0..c {
            let ca = centered[a];
            for b in a..c {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..c {
        for b in a..c {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = vec![0.0; c * k];
    let mut explained_variance = Vec::with_capacity(k);
    for (j, &src) in order.iter().take(k).enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = (0..c)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..c {
            components[i * k + j] = sign * col[i];
        }
        explained_variance.push(eig.eigenvalues[src].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        input_dim: c,
        k,
    })
}

impl PcaModel {
    /// Projects `n × c` spectra to `n × k` scores.
    pub fn transform(&self, spectra: &[f64]) -> Result<Vec<f64>> {
        let (c, k) = (self.input_dim, self.k);
        if !spectra.len().is_multiple_of(c) {
            return Err(Error::Dimension(format!(
                "{} values are not rows of {c}",
                spectra.len()
            )));
        }
        let mut out = Vec::with_capacity(spectra.len() / c * k);
        for row in spectra.chunks(c) {
            let start = out.len();
            out.resize(start + k, 0.0);
            for (i, &v) in row.iter().enumerate() {
                let d = v - self.mean[i];
                for j in 0..k {
                    out[start + j] += d * self.components[i * k + j];
                }
            }
        }
        Ok(out)
    }

    /// Maps `n × k` scores back to `n × c` spectra.
    pub fn inverse_transform(&self, scores: &[f64]) -> Result<Vec<f64>> {
        let (c, k) = (self.input_dim, self.k);
        if !scores.len().is_multiple_of(k) {
            return Err(Error::Dimension(format!("{} values are not rows of {k}", scores.len())));
        }
        let mut out = Vec::with_capacity(scores.len() / k * c);
        for row in scores.chunks(k) {
            for i in 0..c {
                let mut v = self.mean[i];
                for (j, r) in row.iter().enumerate() {
                    v += r * self.components[i * k + j];
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    /// Largest deviation of `componentsᵀ·components` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let (c, k) = (self.input_dim, self.k);
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = (0..c)
                    .map(|i| self.components[i * k + a] * self.components[i * k + b])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| (0.0..1.0).contains(&b);
        if !ok(self.beta1) || !ok(self.beta2) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(params: &[&mut Tensor<T>]) -> Self {
        Self::new(&params.iter().map(|p| p.numel()).collect::<Vec<_>>())
    }
}

/// One bias-corrected Adam update. A missing gradient counts as zero.
///
/// Every gradient is checked before any parameter moves; a non-finite entry
/// aborts with the parameter's name.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    names: &[String],
    grads: &[Option<&[T]>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || names.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension(format!(
            "adam: {n} params, {} names, {} grads, {} state buffers",
            names.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        let len = params[i].numel();
        if state.m[i].len() != len {
            return Err(Error::Dimension(format!("adam state for {} has wrong size", names[i])));
        }
        if let Some(g) = grads[i] {
            if g.len() != len {
                return Err(Error::Dimension(format!(
                    "gradient of {} has {} entries, parameter has {len}",
                    names[i],
                    g.len()
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} at element {j}", names[i])));
            }
        }
    }
    state.t += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powf(state.t as f64));
    let c2 = T::one() - T::lit(cfg.beta2.powf(state.t as f64));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    let one = T::one();
    for i in 0..n {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params[i].data_mut();
        for j in 0..p.len() {
            let g = grads[i].map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v *= s;
        }
    }
    norm
}

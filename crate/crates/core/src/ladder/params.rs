use super::spec::{LadderSpec, LayerKind};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

/// Starting values of the ten combinator scalars: `ẑ = z̃` exactly.
pub const COMBINATOR_INIT: [f64; 10] = [0., 1., 0., 0., 0., 0., 1., 0., 0., 1.];

/// Encoder and decoder weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `[fan_in, width]` for dense layers, `[3, 3, c_in, c_out]` for conv.
    pub w: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    /// Maps this layer's level back to the level below it.
    pub v: Tensor<T>,
}

/// Ten per-unit vectors `a1..a10` of the lateral combinator.
#[derive(Debug, Clone, PartialEq)]
pub struct Combinator<T> {
    pub a: Vec<Tensor<T>>,
}

impl<T: Real> Combinator<T> {
    pub fn new(units: usize, values: [f64; 10]) -> Self {
        Combinator {
            a: values.iter().map(|&v| Tensor::full(&[units], T::lit(v))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Every learned tensor of a ladder network plus the running batch-norm
/// statistics used by the clean encoder at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderParams<T> {
    /// Layer `l` (1-based in the math) lives at index `l - 1`.
    pub layers: Vec<LayerParams<T>>,
    /// One combinator per level `0..=L`.
    pub combinators: Vec<Combinator<T>>,
    /// One entry per layer, index `l - 1`.
    pub running: Vec<RunningStats<T>>,
}

/// Graph handles of a registered [`LadderParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub w: Vec<Var>,
    pub gamma: Vec<Var>,
    pub beta: Vec<Var>,
    pub v: Vec<Var>,
    pub comb: Vec<Vec<Var>>,
}

impl ParamVars {
    /// Handles in the same order as [`LadderParams::named`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in 0..self.w.len() {
            out.extend([self.w[l], self.gamma[l], self.beta[l], self.v[l]]);
        }
        for c in &self.comb {
            out.extend(c.iter().copied());
        }
        out
    }
}

impl<T: Real> LadderParams<T> {
    /// He-normal weights, `γ = 1`, `β = 0`, identity combinators.
    pub fn init(spec: &LadderSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.level_shapes()?;
        let mut layers = Vec::with_capacity(spec.depth());
        let mut running = Vec::with_capacity(spec.depth());
        for (i, layer) in spec.layers.iter().enumerate() {
            let below = &shapes[i];
            let units = layer.width;
            let (w_shape, v_shape, fan_in, v_fan_in) = match layer.kind {
                LayerKind::Conv3x3 => {
                    let c_in = *below.last().unwrap();
                    (vec![3, 3, c_in, units], vec![3, 3, c_in, units], 9 * c_in, 9 * units)
                }
                LayerKind::Dense | LayerKind::SoftmaxHead => {
                    let flat: usize = below.iter().product();
                    (vec![flat, units], vec![units, flat], flat, units)
                }
            };
            layers.push(LayerParams {
                w: Tensor::randn(&w_shape, (2.0 / fan_in as f64).sqrt(), rng),
                gamma: Tensor::full(&[units], T::one()),
                beta: Tensor::zeros(&[units]),
                v: Tensor::randn(&v_shape, (2.0 / v_fan_in as f64).sqrt(), rng),
            });
            running.push(RunningStats {
                mean: vec![T::zero(); units],
                var: vec![T::one(); units],
            });
        }
        let combinators = shapes
            .iter()
            .map(|s| Combinator::new(*s.last().unwrap(), COMBINATOR_INIT))
            .collect();
        Ok(LadderParams {
            layers,
            combinators,
            running,
        })
    }

    /// Trainable tensors with stable names, in optimizer order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let n = i + 1;
            out.push((format!("enc.{n}.w"), &l.w));
            out.push((format!("enc.{n}.gamma"), &l.gamma));
            out.push((format!("enc.{n}.beta"), &l.beta));
            out.push((format!("dec.{n}.v"), &l.v));
        }
        for (lvl, c) in self.combinators.iter().enumerate() {
            for (j, a) in c.a.iter().enumerate() {
                out.push((format!("comb.{lvl}.a{}", j + 1), a));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.gamma);
            out.push(&mut l.beta);
            out.push(&mut l.v);
        }
        for c in &mut self.combinators {
            out.extend(c.a.iter_mut());
        }
        out
    }

    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> ParamVars {
        let mut reg = |t: &Tensor<T>| if trainable { g.param(t) } else { g.constant(t) };
        let mut pv = ParamVars {
            w: vec![],
            gamma: vec![],
            beta: vec![],
            v: vec![],
            comb: vec![],
        };
        for l in &self.layers {
            pv.w.push(reg(&l.w));
            pv.gamma.push(reg(&l.gamma));
            pv.beta.push(reg(&l.beta));
            pv.v.push(reg(&l.v));
        }
        for c in &self.combinators {
            pv.comb.push(c.a.iter().map(&mut reg).collect());
        }
        pv
    }

    /// Errors on the first parameter holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.named() {
            t.check_finite(&name)?;
        }
        for (i, r) in self.running.iter().enumerate() {
            if r.mean.iter().chain(&r.var).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("running stats of layer {}", i + 1)));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> LadderParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        LadderParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w: l.w.cast(),
                    gamma: l.gamma.cast(),
                    beta: l.beta.cast(),
                    v: l.v.cast(),
                })
                .collect(),
            combinators: self
                .combinators
                .iter()
                .map(|c| Combinator {
                    a: c.a.iter().map(Tensor::cast).collect(),
                })
                .collect(),
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    mean: conv(&r.mean),
                    var: conv(&r.var),
                })
                .collect(),
        }
    }
}

/// Whether a parameter name belongs to the decoder path.
pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with("dec.") || name.starts_with("comb.")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder::spec::LadderSpec;

    #[test]
    fn fc_param_shapes_mirror_encoder() {
        let spec = LadderSpec::fc(103, &[300, 200, 100, 100], 9, 0.3, vec![1.0; 6]);
        let mut p = LadderParams::<f64>::init(&spec, &mut Rng::new(0)).unwrap();
        assert_eq!(p.layers[0].w.shape(), &[103, 300]);
        assert_eq!(p.layers[0].v.shape(), &[300, 103]);
        assert_eq!(p.layers[4].w.shape(), &[100, 9]);
        assert_eq!(p.combinators.len(), 6);
        assert_eq!(p.combinators[0].a[0].shape(), &[103]);
        assert_eq!(p.named().len(), 5 * 4 + 6 * 10);
        let n = p.named().len();
        assert_eq!(p.tensors_mut().len(), n);
    }

    #[test]
    fn init_is_seeded() {
        let spec = LadderSpec::fc(5, &[4], 3, 0.3, vec![1.0; 3]);
        let a = LadderParams::<f64>::init(&spec, &mut Rng::new(9)).unwrap();
        let b = LadderParams::<f64>::init(&spec, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}

//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ladder_hsi::gradcheck::{check, GradCheck};
use ladder_hsi::ladder::{ladder_pass, Combinator, LadderParams, LadderSpec};
use ladder_hsi::{Graph, Result, Rng, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn randn(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Normal entries pushed away from zero, for ops with a kink there.
pub fn randn_off_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut t = randn(shape, rng);
    for v in t.data_mut() {
        if v.abs() < 0.1 {
            *v += 0.2f64.copysign(*v);
        }
    }
    t
}

pub fn positive(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut t = randn(shape, rng);
    t.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs());
    t
}

/// `sum(out ⊙ r)` for a fixed random `r`, so every output element carries a
/// distinct weight into the scalar loss.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = randn(&shape, &mut Rng::new(seed));
    let rv = g.constant(&r);
    let p = g.mul(out, rv)?;
    g.sum(p)
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub op: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: OpFn,
}

fn case(
    op: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        op,
        inputs,
        f: Box::new(move |g, v| {
            let out = f(g, v)?;
            if g.value(out).numel() == 1 {
                Ok(out)
            } else {
                weighted_sum(g, out, 99)
            }
        }),
    }
}

const ELEMENTWISE_SHAPES: [&[usize]; 5] = [&[1, 1], &[2, 3], &[4, 1], &[3, 5], &[2, 2, 3]];
const ROW_SHAPES: [&[usize]; 5] = [&[2, 3], &[5, 1], &[1, 4], &[3, 2, 2], &[4, 6]];

/// Five or more cases per differentiable graph op.
pub fn op_cases() -> Vec<OpCase> {
    let mut rng = Rng::new(20240601);
    let rng = &mut rng;
    let mut cases = Vec::new();
    for &(m, k, n) in &[(1, 1, 1), (2, 3, 4), (4, 2, 1), (3, 5, 2), (1, 6, 3)] {
        cases.push(case(
            "matmul",
            vec![randn(&[m, k], rng), randn(&[k, n], rng)],
            |g, v| g.matmul(v[0], v[1]),
        ));
    }
    for &(b, h, w, ci, kh, kw, co) in &[
        (1, 3, 3, 1, 3, 3, 1),
        (2, 4, 4, 2, 3, 3, 2),
        (1, 5, 3, 1, 2, 2, 3),
        (2, 3, 4, 3, 1, 2, 2),
        (1, 4, 5, 2, 3, 3, 1),
    ] {
        cases.push(case(
            "conv2d",
            vec![randn(&[b, h, w, ci], rng), randn(&[kh, kw, ci, co], rng)],
            |g, v| g.conv2d(v[0], v[1]),
        ));
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        cases.push(case(
            "conv2d_transpose",
            vec![randn(&[b, oh, ow, co], rng), randn(&[kh, kw, ci, co], rng)],
            |g, v| g.conv2d_transpose(v[0], v[1]),
        ));
    }
    for s in [&[2usize, 3][..], &[3, 1], &[5, 4], &[2, 2, 2], &[4, 3, 2]] {
        cases.push(case("batchnorm", vec![randn(s, rng)], |g, v| g.batchnorm(v[0], 1e-6)));
        let f = *s.last().unwrap();
        let mean: Vec<f64> = randn(&[f], rng).into_data();
        let var: Vec<f64> = positive(&[f], rng).into_data();
        cases.push(case("batchnorm_eval", vec![randn(s, rng)], move |g, v| {
            g.batchnorm_eval(v[0], &mean, &var, 1e-6)
        }));
        cases.push(case("feature_mean", vec![randn(s, rng)], |g, v| g.feature_mean(v[0])));
        cases.push(case("feature_std", vec![randn(s, rng)], |g, v| {
            g.feature_std(v[0], 1e-6)
        }));
    }
    for s in ELEMENTWISE_SHAPES {
        cases.push(case("add", vec![randn(s, rng), randn(s, rng)], |g, v| {
            g.add(v[0], v[1])
        }));
        cases.push(case("sub", vec![randn(s, rng), randn(s, rng)], |g, v| {
            g.sub(v[0], v[1])
        }));
        cases.push(case("mul", vec![randn(s, rng), randn(s, rng)], |g, v| {
            g.mul(v[0], v[1])
        }));
        cases.push(case("scale", vec![randn(s, rng)], |g, v| g.scale(v[0], -1.7)));
        cases.push(case("relu", vec![randn_off_zero(s, rng)], |g, v| g.relu(v[0])));
        cases.push(case("sigmoid", vec![randn(s, rng)], |g, v| g.sigmoid(v[0])));
        cases.push(case("exp", vec![randn(s, rng)], |g, v| g.exp(v[0])));
        cases.push(case("square", vec![randn(s, rng)], |g, v| g.square(v[0])));
        cases.push(case("sum", vec![randn(s, rng)], |g, v| {
            let s = g.sum(v[0])?;
            g.square(s)
        }));
        cases.push(case("mean", vec![randn(s, rng)], |g, v| {
            let m = g.mean(v[0])?;
            g.square(m)
        }));
        let total: usize = s.iter().product();
        cases.push(case("reshape", vec![randn(s, rng)], move |g, v| {
            g.reshape(v[0], &[total])
        }));
        cases.push(case("gaussian_noise", vec![randn(s, rng)], |g, v| {
            let n = g.gaussian_noise(v[0], 0.3, &mut Rng::new(7))?;
            g.square(n)
        }));
    }
    for s in ROW_SHAPES {
        let f = *s.last().unwrap();
        cases.push(case("add_row", vec![randn(s, rng), randn(&[f], rng)], |g, v| {
            g.add_row(v[0], v[1])
        }));
        cases.push(case("sub_row", vec![randn(s, rng), randn(&[f], rng)], |g, v| {
            g.sub_row(v[0], v[1])
        }));
        cases.push(case("mul_row", vec![randn(s, rng), randn(&[f], rng)], |g, v| {
            g.mul_row(v[0], v[1])
        }));
        cases.push(case("div_row", vec![randn(s, rng), positive(&[f], rng)], |g, v| {
            g.div_row(v[0], v[1])
        }));
        cases.push(case("log_softmax", vec![randn(s, rng)], |g, v| g.log_softmax(v[0])));
        cases.push(case("softmax", vec![randn(s, rng)], |g, v| g.softmax(v[0])));
        let rows = s[0];
        cases.push(case("rows", vec![randn(s, rng)], move |g, v| {
            g.rows(v[0], rows / 2, rows - rows / 2)
        }));
    }
    for &(b, k) in &[(1, 2), (2, 3), (4, 9), (3, 1), (5, 4)] {
        let targets: Vec<usize> = (0..b).map(|i| (i * 7 + 3) % k).collect();
        let t2 = targets.clone();
        cases.push(case("nll", vec![randn(&[b, k], rng)], move |g, v| {
            g.nll(v[0], &targets)
        }));
        cases.push(case("cross_entropy", vec![randn(&[b, k], rng)], move |g, v| {
            g.cross_entropy(v[0], &t2)
        }));
    }
    cases
}

pub fn run_op_case(c: &OpCase) -> Result<GradCheck> {
    check(&c.inputs, FD_STEP, |g, v| (c.f)(g, v))
}

/// A 2-level ladder (one hidden layer plus the head) with every parameter
/// randomized so no gradient is trivially zero.
pub fn small_ladder() -> (LadderSpec, LadderParams<f64>, Tensor<f64>, Vec<usize>) {
    let spec = LadderSpec::fc(4, &[5], 3, 0.3, vec![1.0, 0.5, 0.25]);
    let mut rng = Rng::new(11);
    let mut params = LadderParams::<f64>::init(&spec, &mut rng).unwrap();
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    for c in &mut params.combinators {
        let units = c.a[0].numel();
        let mut fresh = Combinator::<f64>::new(units, [0.4, 1.1, -0.2, 0.3, 0.1, 0.2, 0.9, 0.1, 0.5, 0.8]);
        for a in &mut fresh.a {
            for v in a.data_mut() {
                *v += 0.1 * rng.normal();
            }
        }
        *c = fresh;
    }
    let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
    (spec, params, x, vec![0, 2, 1])
}

/// Total ladder cost as a function of every parameter tensor, with the
/// noise realization pinned by reseeding inside the closure.
pub fn ladder_gradcheck() -> Result<GradCheck> {
    let (spec, params, x, targets) = small_ladder();
    let inputs: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    check(&inputs, FD_STEP, |g, vars| {
        let mut p = params.clone();
        for (dst, src) in p.tensors_mut().into_iter().zip(vars) {
            *dst = g.value(*src).clone();
        }
        let pv = ladder_hsi::ladder::ParamVars {
            w: (0..spec.depth()).map(|l| vars[4 * l]).collect(),
            gamma: (0..spec.depth()).map(|l| vars[4 * l + 1]).collect(),
            beta: (0..spec.depth()).map(|l| vars[4 * l + 2]).collect(),
            v: (0..spec.depth()).map(|l| vars[4 * l + 3]).collect(),
            comb: vars[4 * spec.depth()..].chunks(10).map(<[Var]>::to_vec).collect(),
        };
        let xv = g.constant(&x);
        let (_, costs) = ladder_pass(g, &spec, &p, &pv, xv, &targets, &mut Rng::new(3), true)?;
        Ok(costs.total)
    })
}

/// `max |a − b|` over two equally long slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Six nested loops over batch, output position, kernel offset and input
/// channel, for each output channel.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f64],
    k: &[f64],
    b: usize,
    h: usize,
    w: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    co: usize,
) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; b * oh * ow * co];
    for n in 0..b {
        for y in 0..oh {
            for xx in 0..ow {
                for o in 0..co {
                    let mut s = 0.0;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            for c in 0..ci {
                                s += x[((n * h + y + dy) * w + xx + dx) * ci + c]
                                    * k[((dy * kw + dx) * ci + c) * co + o];
                            }
                        }
                    }
                    out[((n * oh + y) * ow + xx) * co + o] = s;
                }
            }
        }
    }
    out
}

//! Encoder, decoder and costs of the ladder network.

use super::params::{LadderParams, ParamVars};
use super::spec::{Activation, LadderSpec, LayerKind, ReconTarget};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::kernels;
use crate::tensor::{Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-6;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics, differentiated through.
    Train,
    /// Running statistics.
    Eval,
}

/// Result of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderPass {
    /// Pre-activation `z` per level, `z[0]` being the (possibly corrupted)
    /// input.
    pub z: Vec<Var>,
    /// Post-activation `h` per level; `h[L]` holds class probabilities.
    pub h: Vec<Var>,
    /// Un-normalized `W h` of every layer, index `l - 1`.
    pub pre: Vec<Var>,
    /// Class log-probabilities.
    pub log_probs: Var,
}

/// Clean-path batch mean and standard deviation of one level's `z`.
#[derive(Debug, Clone, Copy)]
pub struct LevelStats {
    pub mean: Var,
    pub std: Var,
}

/// Everything a training step produces on the graph.
#[derive(Debug, Clone)]
pub struct LadderPassOutput {
    pub z_tilde: Vec<Var>,
    pub z_clean: Vec<Var>,
    /// Present for every level at or above the lowest active λ.
    pub clean_stats: Vec<Option<LevelStats>>,
    pub z_hat: Vec<Option<Var>>,
    pub y_tilde: Var,
    pub y_clean: Var,
    pub clean: EncoderPass,
}

#[derive(Debug, Clone, Copy)]
pub struct LadderCosts {
    pub supervised: Var,
    pub reconstruction: Var,
    pub total: Var,
}

fn check_input<T: Real>(g: &Graph<T>, spec: &LadderSpec, x: Var) -> Result<()> {
    let s = g.shape(x);
    if s.len() != spec.input_shape.len() + 1 || s[1..] != spec.input_shape[..] {
        return Err(Error::Dimension(format!(
            "input batch {s:?} does not match input shape {:?}",
            spec.input_shape
        )));
    }
    Ok(())
}

pub(crate) fn flatten<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() == 2 {
        return Ok(x);
    }
    g.reshape(x, &[s[0], s[1..].iter().product()])
}

/// Output of a single encoder layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOutput {
    pub pre: Var,
    pub z: Var,
    pub h: Var,
    pub log_probs: Option<Var>,
}

/// Encoder layer `i` applied to `h`; `noise` corrupts the normalized
/// pre-activation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn encode_layer<T: Real>(
    g: &mut Graph<T>,
    spec: &LadderSpec,
    params: &LadderParams<T>,
    pv: &ParamVars,
    i: usize,
    h: Var,
    noise: Option<&mut Rng>,
    mode: BnMode,
) -> Result<LayerOutput> {
    let layer = &spec.layers[i];
    let eps = T::lit(BN_EPS);
    let pre = match layer.kind {
        LayerKind::Conv3x3 => g.conv2d(h, pv.w[i])?,
        LayerKind::Dense | LayerKind::SoftmaxHead => {
            let flat = flatten(g, h)?;
            g.matmul(flat, pv.w[i])?
        }
    };
    let mut z = match mode {
        BnMode::Train => g.batchnorm(pre, eps)?,
        BnMode::Eval => {
            let r = &params.running[i];
            g.batchnorm_eval(pre, &r.mean, &r.var, eps)?
        }
    };
    if let Some(rng) = noise {
        z = g.gaussian_noise(z, spec.noise_std, rng)?;
    }
    let shifted = g.add_row(z, pv.beta[i])?;
    let scaled = g.mul_row(shifted, pv.gamma[i])?;
    let mut log_probs = None;
    let h = match (layer.kind, layer.activation) {
        (LayerKind::SoftmaxHead, _) => {
            let lp = g.log_softmax(scaled)?;
            log_probs = Some(lp);
            g.exp(lp)?
        }
        (_, Activation::Relu) => g.relu(scaled)?,
        (_, Activation::None) => scaled,
    };
    Ok(LayerOutput { pre, z, h, log_probs })
}

fn encode<T: Real>(
    g: &mut Graph<T>,
    spec: &LadderSpec,
    params: &LadderParams<T>,
    pv: &ParamVars,
    x: Var,
    mut noise: Option<&mut Rng>,
    mode: BnMode,
) -> Result<EncoderPass> {
    check_input(g, spec, x)?;
    let mut h = match noise.as_deref_mut() {
        Some(rng) => g.gaussian_noise(x, spec.noise_std, rng)?,
        None => x,
    };
    let mut pass = EncoderPass {
        z: vec![h],
        h: vec![h],
        pre: vec![],
        log_probs: h,
    };
    for i in 0..spec.layers.len() {
        let out = encode_layer(g, spec, params, pv, i, h, noise.as_deref_mut(), mode)?;
        h = out.h;
        if let Some(lp) = out.log_probs {
            pass.log_probs = lp;
        }
        pass.pre.push(out.pre);
        pass.z.push(out.z);
        pass.h.push(out.h);
    }
    Ok(pass)
}

/// Noisy encoder pass: noise on the input and on every normalized
/// pre-activation. Returns all `z̃` and the corrupted log-probabilities.
pub fn corrupted_encoder<T: Real>(
    g: &mut Graph<T>,
    spec: &LadderSpec,
    params: &LadderParams<T>,
    pv: &ParamVars,
    x: Var,
    rng: &mut Rng,
) -> Result<EncoderPass> {
    encode(g, spec, params, pv, x, Some(rng), BnMode::Train)
}

/// Noiseless encoder pass.
pub fn clean_encoder<T: Real>(
    g: &mut Graph<T>,
    spec: &LadderSpec,
    params: &LadderParams<T>,
    pv: &ParamVars,
    x: Var,
    mode: BnMode,
) -> Result<EncoderPass> {
    encode(g, spec, params, pv, x, None, mode)
}

/// Records the batch mean and std of each clean `z` at levels `from..`.
pub fn clean_level_stats<T: Real>(
    g: &mut Graph<T>,
    clean: &EncoderPass,
    from: usize,
) -> Result<Vec<Option<LevelStats>>> {
    let eps = T::lit(BN_EPS);
    (0..clean.z.len())
        .map(|l| {
            if l < from {
                return Ok(None);
            }
            let z = clean.z[l];
            Ok(Some(LevelStats {
                mean: g.feature_mean(z)?,
                std: g.feature_std(z, eps)?,
            }))
        })
        .collect()
}

/// Lateral combinator, per trailing-axis unit:
/// `ẑ = (z̃ − μ(u))·v(u) + μ(u)` with
/// `μ(u) = a1·σ(a2·u + a3) + a4·u + a5` and
/// `v(u) = a6·σ(a7·u + a8) + a9·u + a10`.
pub fn combinator_g<T: Real>(g: &mut Graph<T>, z_tilde: Var, u: Var, a: &[Var]) -> Result<Var> {
    if g.shape(z_tilde) != g.shape(u) {
        return Err(Error::Dimension(format!(
            "combinator: z̃ {:?} vs u {:?}",
            g.shape(z_tilde),
            g.shape(u)
        )));
    }
    if a.len() != 10 {
        return Err(Error::Dimension(format!(
            "combinator needs 10 parameter vectors, got {}",
            a.len()
        )));
    }
    let half = |g: &mut Graph<T>, a: &[Var]| -> Result<Var> {
        let t = g.mul_row(u, a[1])?;
        let t = g.add_row(t, a[2])?;
        let s = g.sigmoid(t)?;
        let s = g.mul_row(s, a[0])?;
        let lin = g.mul_row(u, a[3])?;
        let lin = g.add_row(lin, a[4])?;
        g.add(s, lin)
    };
    let mu = half(g, &a[0..5])?;
    let v = half(g, &a[5..10])?;
    let d = g.sub(z_tilde, mu)?;
    let d = g.mul(d, v)?;
    g.add(d, mu)
}

/// Top-down pass producing `ẑ` for levels `lowest..=L`.
///
/// `u(L) = batchnorm(h̃(L))`, `u(l) = batchnorm(V(l+1) ẑ(l+1))`,
/// `ẑ(l) = g(z̃(l), u(l))`.
pub fn decoder<T: Real>(
    g: &mut Graph<T>,
    spec: &LadderSpec,
    pv: &ParamVars,
    corrupted: &EncoderPass,
    lowest: usize,
) -> Result<Vec<Option<Var>>> {
    let depth = spec.depth();
    let eps = T::lit(BN_EPS);
    let shapes = spec.level_shapes()?;
    let batch = g.shape(corrupted.z[0])[0];
    let mut z_hat = vec![None; depth + 1];
    let mut u = g.batchnorm(corrupted.h[depth], eps)?;
    let mut above = combinator_g(g, corrupted.z[depth], u, &pv.comb[depth])?;
    z_hat[depth] = Some(above);
    for l in (lowest..depth).rev() {
        let layer = &spec.layers[l];
        let back = match layer.kind {
            LayerKind::Conv3x3 => g.conv2d_transpose(above, pv.v[l])?,
            LayerKind::Dense | LayerKind::SoftmaxHead => {
                let flat = flatten(g, above)?;
                let m = g.matmul(flat, pv.v[l])?;
                let mut target = vec![batch];
                target.extend(&shapes[l]);
                g.reshape(m, &target)?
            }
        };
        u = g.batchnorm(back, eps)?;
        above = combinator_g(g, corrupted.z[l], u, &pv.comb[l])?;
        z_hat[l] = Some(above);
    }
    Ok(z_hat)
}

/// `Σ_l λ_l · mean((z(l) − ẑ(l))²)`, averaged over batch and units.
///
/// With `stats`, both sides are first mapped through `(· − μ)/σ` using the
/// clean batch statistics of that level. Levels with `λ = 0` are skipped;
/// if every λ is zero the result is an exact constant zero.
pub fn reconstruction_cost<T: Real>(
    g: &mut Graph<T>,
    z_clean: &[Var],
    z_hat: &[Option<Var>],
    stats: Option<&[Option<LevelStats>]>,
    lambdas: &[f64],
) -> Result<Var> {
    if lambdas.len() != z_clean.len() || z_hat.len() != z_clean.len() {
        return Err(Error::Dimension(format!(
            "{} lambdas for {} clean and {} reconstructed levels",
            lambdas.len(),
            z_clean.len(),
            z_hat.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (l, &lambda) in lambdas.iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let zh =
            z_hat[l].ok_or_else(|| Error::Precondition(format!("no reconstruction at level {l} with λ = {lambda}")))?;
        let (mut target, mut recon) = (z_clean[l], zh);
        if let Some(stats) = stats {
            let s = stats
                .get(l)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Precondition(format!("normalized cost needs clean stats at level {l}")))?;
            target = g.sub_row(target, s.mean)?;
            target = g.div_row(target, s.std)?;
            recon = g.sub_row(recon, s.mean)?;
            recon = g.div_row(recon, s.std)?;
        }
        let d = g.sub(target, recon)?;
        let sq = g.square(d)?;
        let m = g.mean(sq)?;
        let term = g.scale(m, T::lit(lambda))?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(&Tensor::scalar(T::zero()))),
    }
}

/// Mean negative log-likelihood of the labeled rows under the corrupted pass.
pub fn supervised_cost<T: Real>(g: &mut Graph<T>, y_tilde: Var, targets: &[usize]) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Precondition(
            "supervised cost needs at least one labeled example".into(),
        ));
    }
    let labeled = g.rows(y_tilde, 0, targets.len())?;
    g.nll(labeled, targets)
}

pub fn total_cost<T: Real>(g: &mut Graph<T>, supervised: Var, reconstruction: Var) -> Result<Var> {
    g.add(supervised, reconstruction)
}

/// Corrupted pass, clean pass, decoder and the three costs on one batch.
///
/// The first `targets.len()` rows of `x` are the labeled examples. With
/// `with_decoder = false` (supervised-only training) no decoder is built
/// and the reconstruction cost is the constant zero.
#[allow(clippy::too_many_arguments)]
pub fn ladder_pass<T: Real>(
    g: &mut Graph<T>,
    spec: &LadderSpec,
    params: &LadderParams<T>,
    pv: &ParamVars,
    x: Var,
    targets: &[usize],
    rng: &mut Rng,
    with_decoder: bool,
) -> Result<(LadderPassOutput, LadderCosts)> {
    let corrupted = corrupted_encoder(g, spec, params, pv, x, rng)?;
    let clean = clean_encoder(g, spec, params, pv, x, BnMode::Train)?;
    let lowest = if with_decoder { spec.lowest_active_level() } else { None };
    let (z_hat, clean_stats) = match lowest {
        Some(lo) => {
            let stats = match spec.recon_target {
                ReconTarget::Normalized => clean_level_stats(g, &clean, lo)?,
                ReconTarget::Raw => vec![None; clean.z.len()],
            };
            (decoder(g, spec, pv, &corrupted, lo)?, stats)
        }
        None => (vec![None; clean.z.len()], vec![None; clean.z.len()]),
    };
    let supervised = supervised_cost(g, corrupted.log_probs, targets)?;
    let stats = match spec.recon_target {
        ReconTarget::Normalized => Some(clean_stats.as_slice()),
        ReconTarget::Raw => None,
    };
    let lambdas: Vec<f64> = if with_decoder {
        spec.lambdas.clone()
    } else {
        vec![0.0; spec.lambdas.len()]
    };
    let reconstruction = reconstruction_cost(g, &clean.z, &z_hat, stats, &lambdas)?;
    let total = total_cost(g, supervised, reconstruction)?;
    let out = LadderPassOutput {
        z_tilde: corrupted.z.clone(),
        z_clean: clean.z.clone(),
        clean_stats,
        z_hat,
        y_tilde: corrupted.log_probs,
        y_clean: clean.log_probs,
        clean,
    };
    Ok((
        out,
        LadderCosts {
            supervised,
            reconstruction,
            total,
        },
    ))
}

/// Folds the clean pass's batch statistics into the running averages.
pub fn update_running_stats<T: Real>(g: &Graph<T>, clean: &EncoderPass, params: &mut LadderParams<T>) {
    let m = T::lit(BN_MOMENTUM);
    for (pre, r) in clean.pre.iter().zip(&mut params.running) {
        let t = g.value(*pre);
        let (mean, var) = kernels::feature_moments(t.data(), t.features());
        for (rm, bm) in r.mean.iter_mut().zip(mean) {
            *rm = m * *rm + (T::one() - m) * bm;
        }
        for (rv, bv) in r.var.iter_mut().zip(var) {
            *rv = m * *rv + (T::one() - m) * bv;
        }
    }
}

/// Clean-path class log-probabilities with running batch-norm statistics.
pub fn predict_log_proba<T: Real>(spec: &LadderSpec, params: &LadderParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    params.check_finite()?;
    let mut g = Graph::new();
    let pv = params.register(&mut g, false);
    let xv = g.constant(x);
    let pass = clean_encoder(&mut g, spec, params, &pv, xv, BnMode::Eval)?;
    Ok(g.value(pass.log_probs).clone())
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows<T: Real>(scores: &Tensor<T>) -> Vec<usize> {
    let k = scores.features();
    scores
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Class predictions from the clean encoder; fully deterministic.
pub fn predict<T: Real>(spec: &LadderSpec, params: &LadderParams<T>, x: &Tensor<T>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&predict_log_proba(spec, params, x)?))
}

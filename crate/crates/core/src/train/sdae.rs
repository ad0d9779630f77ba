use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::hsi::PreparedData;
use crate::ladder::model::{encode_layer, flatten, BnMode};
use crate::ladder::{LadderParams, LayerKind};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Graph;

/// Greedy layer-wise denoising-autoencoder pretraining of every hidden
/// layer on unlabeled rows.
///
/// Layer `l` encodes a corrupted copy of the (fixed) clean output of the
/// layers below and decodes it with `V(l)`; the cost is the mean squared
/// error against the uncorrupted input. Returns the per-iteration costs of
/// all layers in order.
pub fn sdae_pretrain<T: Real>(
    cfg: &TrainConfig,
    params: &mut LadderParams<T>,
    data: &PreparedData,
    pool: &[usize],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let spec = &cfg.ladder;
    if pool.is_empty() {
        return Err(Error::Data("no unlabeled rows for pretraining".into()));
    }
    let mut losses = Vec::with_capacity(cfg.sdae_iterations * spec.depth());
    for l in 0..spec.depth() {
        if spec.layers[l].kind == LayerKind::SoftmaxHead {
            continue;
        }
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let owned = [
            format!("enc.{}.w", l + 1),
            format!("enc.{}.gamma", l + 1),
            format!("enc.{}.beta", l + 1),
            format!("dec.{}.v", l + 1),
        ];
        let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
        let mut adam = AdamState::new(&sizes);
        for it in 0..cfg.sdae_iterations {
            let rows: Vec<usize> = (0..cfg.batch_size).map(|_| pool[rng.index(pool.len())]).collect();
            let x = data.patches.gather::<T>(&rows, &spec.input_shape)?;
            let mut g = Graph::new();
            let pv = params.register(&mut g, true);
            let mut h = g.constant(&x);
            for i in 0..l {
                h = encode_layer(&mut g, spec, params, &pv, i, h, None, BnMode::Train)?.h;
            }
            let target_value = g.value(h).clone();
            let target = g.constant(&target_value);
            let noisy = g.gaussian_noise(target, spec.noise_std, rng)?;
            let code = encode_layer(&mut g, spec, params, &pv, l, noisy, None, BnMode::Train)?.h;
            let recon = match spec.layers[l].kind {
                LayerKind::Conv3x3 => g.conv2d_transpose(code, pv.v[l])?,
                _ => {
                    let flat = flatten(&mut g, code)?;
                    let m = g.matmul(flat, pv.v[l])?;
                    g.reshape(m, target_value.shape())?
                }
            };
            let d = g.sub(recon, target)?;
            let sq = g.square(d)?;
            let loss = g.mean(sq)?;
            let value = g.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    iteration: it as u64 + 1,
                    msg: format!("pretraining layer {} cost is {value}", l + 1),
                });
            }
            g.backward(loss)?;
            let grads: Vec<Option<&[T]>> = pv
                .ordered()
                .into_iter()
                .zip(&names)
                .map(|(v, n)| if owned.contains(n) { g.grad(v) } else { None })
                .collect();
            let mut tensors = params.tensors_mut();
            adam_step(&mut tensors, &names, &grads, &mut adam, cfg.learning_rate, &cfg.adam)?;
            losses.push(value);
        }
    }
    Ok(losses)
}

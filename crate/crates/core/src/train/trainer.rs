use std::path::Path;
use std::time::Instant;

use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::checkpoint::Checkpoint;
use super::config::{TrainConfig, TrainMode};
use super::metrics::evaluate;
use super::report::TrainReport;
use super::sdae::sdae_pretrain;
use super::LossRecord;
use crate::error::{Error, Result};
use crate::hsi::{balance_labels, PreparedData};
use crate::ladder::{ladder_pass, update_running_stats, LadderParams, LadderSpec};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Graph;

/// Label of the stream used for class balancing, kept apart from the main
/// stream so resuming does not need to replay it.
const BALANCE_STREAM: u64 = 0xba1a;

/// Where and how often to write checkpoints while training.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointPolicy<'p> {
    pub path: &'p Path,
    /// Save every this many iterations; 0 saves only at the end.
    pub every: usize,
}

/// Resumable state of one training run.
pub struct Trainer<'d, T> {
    cfg: TrainConfig,
    config_json: String,
    data: &'d PreparedData,
    labeled_pool: Vec<usize>,
    unlabeled_pool: Vec<usize>,
    pass_spec: LadderSpec,
    names: Vec<String>,
    pub params: LadderParams<T>,
    pub adam: AdamState<T>,
    rng: Rng,
    pub iteration: usize,
    pub losses: Vec<LossRecord>,
    pub pretrain_losses: Vec<f64>,
    seconds: f64,
}

fn check_data(cfg: &TrainConfig, data: &PreparedData) -> Result<()> {
    cfg.validate()?;
    if cfg.ladder.input_shape != data.sample_shape() {
        return Err(Error::Config(format!(
            "model input shape {:?} does not match data samples {:?}",
            cfg.ladder.input_shape,
            data.sample_shape()
        )));
    }
    if cfg.ladder.num_classes() != data.patches.classes {
        return Err(Error::Config(format!(
            "model has {} classes, data has {}",
            cfg.ladder.num_classes(),
            data.patches.classes
        )));
    }
    if data.split.labeled_train.is_empty() {
        return Err(Error::Data("no labeled training examples".into()));
    }
    Ok(())
}

impl<'d, T: Real> Trainer<'d, T> {
    /// Fresh run: initializes parameters from the config seed and, in
    /// `sdae-pretrain` mode, performs layer-wise pretraining.
    pub fn new(cfg: &TrainConfig, data: &'d PreparedData) -> Result<Self> {
        check_data(cfg, data)?;
        let mut rng = Rng::new(cfg.seed);
        let mut params = LadderParams::init(&cfg.ladder, &mut rng)?;
        let mut t = Self::assemble(cfg, data, params.clone(), rng.clone())?;
        if cfg.mode == TrainMode::SdaePretrain {
            let start = Instant::now();
            t.pretrain_losses = sdae_pretrain(cfg, &mut params, data, &t.unlabeled_pool, &mut rng)?;
            t.seconds += start.elapsed().as_secs_f64();
            t.params = params;
            t.rng = rng;
        }
        Ok(t)
    }

    fn assemble(cfg: &TrainConfig, data: &'d PreparedData, params: LadderParams<T>, rng: Rng) -> Result<Self> {
        let mut labeled_pool = data.split.labeled_train.clone();
        if let Some(b) = cfg.balance {
            let mut brng = Rng::new(cfg.seed).derive(BALANCE_STREAM);
            labeled_pool = balance_labels(&labeled_pool, &data.patches.labels, b, &mut brng)?;
        }
        let unlabeled_pool = if data.split.unlabeled_train.is_empty() {
            data.split.train()
        } else {
            data.split.unlabeled_train.clone()
        };
        let mut pass_spec = cfg.ladder.clone();
        if cfg.mode == TrainMode::SdaePretrain {
            pass_spec.noise_std = 0.0;
        }
        let names = params.named().into_iter().map(|(n, _)| n).collect();
        let adam = AdamState::new(&params.named().iter().map(|(_, t)| t.numel()).collect::<Vec<_>>());
        Ok(Trainer {
            cfg: cfg.clone(),
            config_json: serde_json::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?,
            data,
            labeled_pool,
            unlabeled_pool,
            pass_spec,
            names,
            params,
            adam,
            rng,
            iteration: 0,
            losses: Vec::new(),
            pretrain_losses: Vec::new(),
            seconds: 0.0,
        })
    }

    /// Continues a run from a checkpoint taken on the same data.
    pub fn resume(ck: Checkpoint<T>, data: &'d PreparedData) -> Result<Self> {
        let cfg = ck.config()?;
        check_data(&cfg, data)?;
        let mut t = Self::assemble(&cfg, data, ck.params.clone(), ck.rng())?;
        t.config_json = ck.config_json;
        t.adam = ck.adam;
        t.iteration = ck.iteration as usize;
        t.losses = ck.losses;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config_json: self.config_json.clone(),
            iteration: self.iteration as u64,
            rng: self.rng.state(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            losses: self.losses.clone(),
        }
    }

    fn sample(&mut self, pool_labeled: bool) -> Vec<usize> {
        let pool = if pool_labeled {
            &self.labeled_pool
        } else {
            &self.unlabeled_pool
        };
        (0..self.cfg.batch_size)
            .map(|_| pool[self.rng.index(pool.len())])
            .collect()
    }

    /// One optimizer step on a batch of labeled rows followed by unlabeled
    /// rows.
    pub fn step(&mut self) -> Result<LossRecord> {
        let it = self.iteration + 1;
        let it64 = it as u64;
        let labeled = self.sample(true);
        let unlabeled = self.sample(false);
        let targets = labeled
            .iter()
            .map(|&i| self.data.patches.class_of(i))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<usize> = labeled.iter().chain(&unlabeled).copied().collect();
        let x = self.data.patches.gather::<T>(&rows, &self.pass_spec.input_shape)?;

        let mut g = Graph::new();
        let pv = self.params.register(&mut g, true);
        let xv = g.constant(&x);
        let with_decoder = self.cfg.mode == TrainMode::Ladder;
        let (out, costs) = ladder_pass(
            &mut g,
            &self.pass_spec,
            &self.params,
            &pv,
            xv,
            &targets,
            &mut self.rng,
            with_decoder,
        )?;
        let record = LossRecord {
            c_super: g.scalar(costs.supervised).as_f64(),
            c_recon: g.scalar(costs.reconstruction).as_f64(),
            c_total: g.scalar(costs.total).as_f64(),
        };
        if !record.c_total.is_finite() {
            return Err(Error::Divergence {
                iteration: it64,
                msg: format!("total cost is {}", record.c_total),
            });
        }
        g.backward(costs.total)?;
        let mut grads: Vec<Vec<T>> = pv
            .ordered()
            .into_iter()
            .zip(self.params.named())
            .map(|(v, (_, t))| g.grad(v).map_or_else(|| vec![T::zero(); t.numel()], <[T]>::to_vec))
            .collect();
        if let Some(max) = self.cfg.grad_clip {
            clip_grad_norm(&mut grads, max);
        }
        let lr = self.cfg.lr_at(self.iteration, self.cfg.iterations);
        let grad_refs: Vec<Option<&[T]>> = grads.iter().map(|g| Some(g.as_slice())).collect();
        let mut tensors = self.params.tensors_mut();
        adam_step(
            &mut tensors,
            &self.names,
            &grad_refs,
            &mut self.adam,
            lr,
            &self.cfg.adam,
        )
        .map_err(|e| Error::Divergence {
            iteration: it64,
            msg: e.to_string(),
        })?;
        update_running_stats(&g, &out.clean, &mut self.params);
        self.iteration = it;
        self.losses.push(record);
        Ok(record)
    }

    /// Steps until `until` iterations are complete, saving checkpoints per
    /// `policy`. On divergence the most recent checkpoint file is left as is.
    pub fn run_until(&mut self, until: usize, policy: Option<CheckpointPolicy>) -> Result<()> {
        let start = Instant::now();
        let mut last_saved: Option<usize> = None;
        while self.iteration < until {
            if let Err(e) = self.step() {
                self.seconds += start.elapsed().as_secs_f64();
                return Err(match (e, policy, last_saved) {
                    (Error::Divergence { iteration, msg }, Some(p), Some(k)) => Error::Divergence {
                        iteration,
                        msg: format!("{msg}; last checkpoint {} at iteration {k}", p.path.display()),
                    },
                    (e, ..) => e,
                });
            }
            if let Some(p) = policy {
                if p.every > 0 && self.iteration.is_multiple_of(p.every) {
                    self.checkpoint().save(p.path)?;
                    last_saved = Some(self.iteration);
                }
            }
        }
        if let Some(p) = policy {
            if last_saved != Some(self.iteration) {
                self.checkpoint().save(p.path)?;
            }
        }
        self.seconds += start.elapsed().as_secs_f64();
        Ok(())
    }

    pub fn run(&mut self, policy: Option<CheckpointPolicy>) -> Result<()> {
        self.run_until(self.cfg.iterations, policy)
    }

    /// Evaluates on the test split.
    pub fn report(&self) -> Result<TrainReport> {
        let start = Instant::now();
        let metrics = evaluate(
            &self.cfg.ladder,
            &self.params,
            &self.data.patches,
            &self.data.split.test,
            self.cfg.eval_chunk,
        )?;
        Ok(TrainReport {
            config: self.cfg.clone(),
            iterations: self.iteration,
            labeled: self.data.split.labeled_train.len(),
            unlabeled: self.data.split.unlabeled_train.len(),
            test: self.data.split.test.len(),
            losses: self.losses.clone(),
            pretrain_losses: self.pretrain_losses.clone(),
            metrics,
            seconds: self.seconds + start.elapsed().as_secs_f64(),
        })
    }
}

/// Trains from scratch for the configured number of iterations and scores
/// the clean encoder on the test split.
pub fn train<T: Real>(cfg: &TrainConfig, data: &PreparedData) -> Result<(LadderParams<T>, TrainReport)> {
    let mut t = Trainer::<T>::new(cfg, data)?;
    t.run(None)?;
    let report = t.report()?;
    Ok((t.params, report))
}

//! Minibatch optimization shared by the hierarchical model and baselines.
//!
//! Each step draws its randomness from its own ChaCha stream keyed by the
//! step index, so a run resumed from a checkpoint replays exactly the
//! batches and noise of an uninterrupted run.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hvae::{ElboParts, MohbaModel};
use crate::nn::{Adam, Grads, ParamStore};
use crate::trajdata::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta_max: f64,
    pub anneal_period: u64,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 128,
            learning_rate: 1e-3,
            beta_max: 1e-2,
            anneal_period: 10_000,
            clip_norm: 10.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.anneal_period == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "train.batch_size, train.anneal_period and train.log_every must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0 && self.beta_max >= 0.0) {
            return Err(Error::Config(
                "train.learning_rate and train.clip_norm must be > 0, train.beta_max >= 0".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::Config("train.adam_beta1 and train.adam_beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Cyclical KL weight: a linear ramp from 0 to `beta_max` over the first
/// half of each period, then a plateau.
pub fn beta_schedule(step: u64, config: &TrainConfig) -> f64 {
    let period = config.anneal_period.max(1);
    let pos = (step % period) as f64;
    let half = period as f64 / 2.0;
    if pos < half {
        config.beta_max * pos / half
    } else {
        config.beta_max
    }
}

/// Rescales `grads` so their joint L2 norm is at most `clip_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

/// Loss terms of one step. Models without a term leave it `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss: f64,
    pub recon: Option<f64>,
    pub kl_local: Option<f64>,
    pub kl_joint: Option<f64>,
}

impl From<ElboParts> for LossParts {
    fn from(p: ElboParts) -> Self {
        Self {
            loss: p.loss,
            recon: Some(p.recon),
            kl_local: p.kl_local,
            kl_joint: Some(p.kl_joint),
        }
    }
}

/// A model the trainer can optimize.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn check_meta(&self, meta: &DatasetMeta) -> Result<()>;
    fn loss_and_grad(&self, batch: &[&Trajectory], beta: f64, rng: &mut ChaCha8Rng) -> Result<(LossParts, Grads)>;
    /// Whether the loss has a KL weight; controls the logged `beta` column.
    fn uses_beta(&self) -> bool {
        true
    }
}

impl Trainable for MohbaModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        MohbaModel::check_meta(self, meta)
    }

    fn loss_and_grad(&self, batch: &[&Trajectory], beta: f64, rng: &mut ChaCha8Rng) -> Result<(LossParts, Grads)> {
        MohbaModel::loss_and_grad(self, batch, beta, rng).map(|(p, g)| (p.into(), g))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Completed steps.
    pub step: u64,
    pub adam: Adam,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: &TrainConfig) -> Self {
        Self {
            step: 0,
            adam: Adam::new(params, config.learning_rate, config.adam_beta1, config.adam_beta2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub recon: Option<f64>,
    pub kl_local: Option<f64>,
    pub kl_joint: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

const CSV_HEADER: &str = "step,loss,recon,kl_local,kl_joint,beta";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                r.loss,
                opt(r.recon),
                opt(r.kl_local),
                opt(r.kl_joint),
                opt(r.beta)
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: idx + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(format!("expected 6 fields, found {}", fields.len())));
            }
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|e| bad(format!("{s:?}: {e}")))
                }
            };
            rows.push(MetricsRow {
                step: fields[0].parse().map_err(|e| bad(format!("step: {e}")))?,
                loss: num(fields[1])?.ok_or_else(|| bad("empty loss".into()))?,
                recon: num(fields[2])?,
                kl_local: num(fields[3])?,
                kl_joint: num(fields[4])?,
                beta: num(fields[5])?,
            });
        }
        Ok(Self { rows })
    }

    /// Mean of `f` over rows whose step lies in `[from, to)`.
    pub fn mean_over(&self, from: u64, to: u64, f: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.step >= from && r.step < to)
            .filter_map(f)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Trains a fresh model for `config.steps` steps.
pub fn train<M: Trainable>(
    model: &mut M,
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
) -> Result<(OptimizerState, MetricsLog)> {
    let mut state = OptimizerState::new(model.params(), config);
    let log = resume(model, &mut state, dataset, config)?;
    Ok((state, log))
}

/// Continues training from `state.step` up to `config.steps`.
pub fn resume<M: Trainable>(
    model: &mut M,
    state: &mut OptimizerState,
    dataset: &TrajectoryDataset,
    config: &TrainConfig,
) -> Result<MetricsLog> {
    config.validate()?;
    model.check_meta(&dataset.meta)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if state.adam.m.len() != model.params().len() {
        return Err(Error::Checkpoint("optimizer state does not match model parameters".into()));
    }
    let mut log = MetricsLog::default();
    while state.step < config.steps {
        let step = state.step;
        let mut r = rng::stream(config.seed, step);
        let batch: Vec<&Trajectory> = (0..config.batch_size)
            .map(|_| &dataset.trajectories[r.random_range(0..dataset.len())])
            .collect();
        let beta = beta_schedule(step, config);
        let (parts, mut grads) = model.loss_and_grad(&batch, beta, &mut r)?;
        if !parts.loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!(
                    "loss {} (recon {:?}, kl_local {:?}, kl_joint {:?}), finite gradients: {}",
                    parts.loss,
                    parts.recon,
                    parts.kl_local,
                    parts.kl_joint,
                    grads.is_finite()
                ),
            });
        }
        clip_global_norm(&mut grads, config.clip_norm);
        state.adam.step(model.params_mut(), &grads);
        if step % config.log_every == 0 {
            log::info!("step {step}: loss {:.4}", parts.loss);
            log.rows.push(MetricsRow {
                step,
                loss: parts.loss,
                recon: parts.recon,
                kl_local: parts.kl_local,
                kl_joint: parts.kl_joint,
                beta: model.uses_beta().then_some(beta),
            });
        }
        state.step += 1;
    }
    Ok(log)
}

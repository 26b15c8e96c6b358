//! Python bindings: corpus generation, training, embedding, and a few of the
//! analysis primitives. Configs are passed as JSON text.

use std::path::PathBuf;

use mohba::baselines::{FlatVae, LstmBaseline};
use mohba::behaviorgen::generate_corpus_with_workers;
use mohba::checkpoint::{load_checkpoint, read_header, save_checkpoint, ModelKind};
use mohba::config::RunConfig;
use mohba::envs::{coord_reward, Region};
use mohba::evalmetrics::{embed_dataset, EmbeddingTable};
use mohba::nn::Tensor;
use mohba::trajdata::{load_dataset, save_dataset};
use mohba::training::train as train_model;
use mohba::{Error, ModelConfig, MohbaModel, TrainConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn run_config(json: Option<&str>) -> mohba::Result<RunConfig> {
    let mut cfg = match json {
        Some(text) => RunConfig::from_json(text)?,
        None => RunConfig::default(),
    };
    cfg.apply_env_seed()?;
    cfg.validate()?;
    Ok(cfg)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse_region(s: &str) -> mohba::Result<Region> {
    match s {
        "A" | "a" => Ok(Region::A),
        "B" | "b" => Ok(Region::B),
        "C" | "c" => Ok(Region::C),
        other => Err(Error::InvalidArgument(format!("unknown region {other:?}"))),
    }
}

/// Generates a corpus and writes it as JSON lines; returns the trajectory count.
#[pyfunction]
#[pyo3(signature = (out, config_json=None, workers=1))]
fn gen_data(out: PathBuf, config_json: Option<&str>, workers: usize) -> PyResult<usize> {
    let cfg = run_config(config_json).map_err(py_err)?;
    let data = generate_corpus_with_workers(&cfg.corpus, workers.max(1)).map_err(py_err)?;
    save_dataset(&data, &out).map_err(py_err)?;
    Ok(data.len())
}

/// Trains the hierarchical model on a dataset file and saves a checkpoint.
/// Returns the logged `(step, loss)` pairs.
#[pyfunction]
#[pyo3(signature = (data, checkpoint, config_json=None, steps=None))]
fn train(data: PathBuf, checkpoint: PathBuf, config_json: Option<&str>, steps: Option<u64>) -> PyResult<Vec<(u64, f64)>> {
    let cfg = run_config(config_json).map_err(py_err)?;
    let data = load_dataset(&data).map_err(py_err)?;
    let mut tc = cfg.train.clone();
    if let Some(s) = steps {
        tc.steps = s;
    }
    let mut model = MohbaModel::new(ModelConfig::new(&cfg.model, &data.meta), tc.seed).map_err(py_err)?;
    let (state, log) = train_model(&mut model, &data, &tc).map_err(py_err)?;
    save_checkpoint(&model, Some(&state), &checkpoint).map_err(py_err)?;
    Ok(log.rows.iter().map(|r| (r.step, r.loss)).collect())
}

/// Posterior-mean embeddings `(z_omega, z_alpha)` of every trajectory; the
/// second entry is `None` for models without local latents.
#[pyfunction]
fn embed(checkpoint: PathBuf, data: PathBuf) -> PyResult<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
    let data = load_dataset(&data).map_err(py_err)?;
    let provenance = checkpoint.display().to_string();
    let kind = read_header(&checkpoint).map_err(py_err)?.kind;
    let table: EmbeddingTable = match kind {
        ModelKind::Mohba => {
            let (m, _): (MohbaModel, _) = load_checkpoint(&checkpoint).map_err(py_err)?;
            embed_dataset(&m, &data, &provenance)
        }
        ModelKind::FlatVae => {
            let (m, _): (FlatVae, _) = load_checkpoint(&checkpoint).map_err(py_err)?;
            embed_dataset(&m, &data, &provenance)
        }
        ModelKind::Lstm => {
            let (m, _): (LstmBaseline, _) = load_checkpoint(&checkpoint).map_err(py_err)?;
            embed_dataset(&m, &data, &provenance)
        }
    }
    .map_err(py_err)?;
    Ok((rows(&table.z_omega), table.z_alpha.as_ref().map(rows)))
}

/// KL weight at `step` for a cyclical schedule.
#[pyfunction]
fn beta_schedule(step: u64, beta_max: f64, period: u64) -> f64 {
    let cfg = TrainConfig {
        beta_max,
        anneal_period: period,
        ..TrainConfig::default()
    };
    mohba::training::beta_schedule(step, &cfg)
}

/// K-means with restarts; returns `(labels, inertia)`.
#[pyfunction]
#[pyo3(signature = (points, k, seed=0))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<(Vec<usize>, f64)> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(PyValueError::new_err("points must all have the same length"));
    }
    let flat: Vec<f64> = points.into_iter().flatten().collect();
    let n = if d == 0 { 0 } else { flat.len() / d };
    let t = Tensor::from_shape_vec((n, d), flat).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let fit = mohba::evalmetrics::kmeans(&t, k, seed).map_err(py_err)?;
    Ok((fit.labels, fit.inertia))
}

/// Per-step reward pair of the coordination game for two region labels.
#[pyfunction]
fn payoff(region_0: &str, region_1: &str) -> PyResult<(f64, f64)> {
    let a = parse_region(region_0).map_err(py_err)?;
    let b = parse_region(region_1).map_err(py_err)?;
    Ok(coord_reward(a, b, &Default::default()))
}

#[pymodule]
fn pymohba(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(beta_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(payoff, m)?)?;
    Ok(())
}

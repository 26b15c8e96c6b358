//! Trajectory data model and the JSON-lines dataset format.
//!
//! A dataset file holds one meta record on the first line followed by one
//! record per trajectory:
//!
//! ```text
//! {"meta": {"n_agents": 2, "state_dim": 4, "action_dims": [2, 2], "episode_len": 50, "has_rewards": true}}
//! {"run_id": "run0:modes={A,B}", "seed": 11, "train_step": 0, "states": [[..], ..], "actions": [[[..], [..]], ..], "rewards": [[..], ..]}
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so a save/load
//! cycle reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_dims: Vec<usize>,
    pub episode_len: usize,
    pub has_rewards: bool,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::InvalidArgument("n_agents must be >= 1".into()));
        }
        if self.state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be >= 1".into()));
        }
        if self.action_dims.len() != self.n_agents {
            return Err(Error::InvalidArgument(format!(
                "action_dims has {} entries for {} agents",
                self.action_dims.len(),
                self.n_agents
            )));
        }
        if self.action_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("every action dim must be >= 1".into()));
        }
        if self.episode_len == 0 {
            return Err(Error::InvalidArgument("episode_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the concatenated joint action.
    pub fn joint_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }

    pub fn max_action_dim(&self) -> usize {
        self.action_dims.iter().copied().max().unwrap_or(0)
    }
}

fn default_run_id() -> String {
    "unknown".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default)]
    pub seed: i64,
    #[serde(default)]
    pub train_step: u64,
    /// `episode_len + 1` rows of `state_dim` values.
    pub states: Vec<Vec<f64>>,
    /// `episode_len` rows, each with one action vector per agent.
    pub actions: Vec<Vec<Vec<f64>>>,
    /// `episode_len x n_agents` when present.
    #[serde(default)]
    pub rewards: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    /// Checks the trajectory against `meta`; the error string names the
    /// first offending field.
    pub fn conformance(&self, meta: &DatasetMeta) -> std::result::Result<(), String> {
        let t = meta.episode_len;
        if self.states.len() != t + 1 {
            return Err(format!(
                "expected {} state rows, found {}",
                t + 1,
                self.states.len()
            ));
        }
        for (row, s) in self.states.iter().enumerate() {
            if s.len() != meta.state_dim {
                return Err(format!(
                    "state row {row} has {} values, expected {}",
                    s.len(),
                    meta.state_dim
                ));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(format!("state row {row} has a non-finite value"));
            }
        }
        if self.actions.len() != t {
            return Err(format!(
                "expected {t} action rows, found {}",
                self.actions.len()
            ));
        }
        for (row, joint) in self.actions.iter().enumerate() {
            if joint.len() != meta.n_agents {
                return Err(format!(
                    "action row {row} has {} agents, expected {}",
                    joint.len(),
                    meta.n_agents
                ));
            }
            for (i, a) in joint.iter().enumerate() {
                if a.len() != meta.action_dims[i] {
                    return Err(format!(
                        "action row {row} agent {i} has {} values, expected {}",
                        a.len(),
                        meta.action_dims[i]
                    ));
                }
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(format!("action row {row} agent {i} has a non-finite value"));
                }
            }
        }
        match (&self.rewards, meta.has_rewards) {
            (None, true) => return Err("rewards missing but meta.has_rewards is set".into()),
            (Some(_), false) => return Err("rewards present but meta.has_rewards is unset".into()),
            (Some(r), true) => {
                if r.len() != t || r.iter().any(|row| row.len() != meta.n_agents) {
                    return Err(format!("rewards must be {t} x {}", meta.n_agents));
                }
                if r.iter().flatten().any(|v| !v.is_finite()) {
                    return Err("rewards contain a non-finite value".into());
                }
            }
            (None, false) => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(meta: DatasetMeta) -> Result<Self> {
        meta.validate()?;
        Ok(Self {
            meta,
            trajectories: Vec::new(),
        })
    }

    pub fn from_parts(meta: DatasetMeta, trajectories: Vec<Trajectory>) -> Result<Self> {
        let ds = Self { meta, trajectories };
        ds.validate()?;
        Ok(ds)
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        traj.conformance(&self.meta).map_err(|reason| Error::Shape {
            index: self.trajectories.len(),
            reason,
        })?;
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        for (index, traj) in self.trajectories.iter().enumerate() {
            traj.conformance(&self.meta)
                .map_err(|reason| Error::Shape { index, reason })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Sub-dataset made of the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            meta: self.meta.clone(),
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: DatasetMeta,
}

pub fn save_dataset(dataset: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    dataset.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(dataset, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_dataset(dataset: &TrajectoryDataset, w: &mut impl Write) -> std::io::Result<()> {
    let meta = MetaLine {
        meta: dataset.meta.clone(),
    };
    serde_json::to_writer(&mut *w, &meta)?;
    w.write_all(b"\n")?;
    for traj in &dataset.trajectories {
        serde_json::to_writer(&mut *w, traj)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses a dataset from any line-oriented reader.
pub fn read_dataset(reader: impl BufRead) -> Result<TrajectoryDataset> {
    let mut lines = reader.lines().enumerate();
    let meta = loop {
        match lines.next() {
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty file, expected a meta record".into(),
                })
            }
            Some((n, line)) => {
                let line = line.map_err(|e| Error::io("<dataset>", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let m: MetaLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: n + 1,
                    message: format!("expected meta record: {e}"),
                })?;
                break m.meta;
            }
        }
    };
    meta.validate()?;
    let mut dataset = TrajectoryDataset::new(meta)?;
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io("<dataset>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        dataset.push(traj)?;
    }
    Ok(dataset)
}

/// Deterministic shuffled partition of `0..n` into (train, validation)
/// index lists. The validation part has `ceil(n * val_fraction)` entries;
/// both parts are returned in ascending order.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    let n_val = ((n as f64 * val_fraction - 1e-9).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split_dataset(
    dataset: &TrajectoryDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
    let (train, val) = split_indices(dataset.len(), val_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

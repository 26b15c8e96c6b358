//! Scripted behavior-policy corpora.
//!
//! Each pseudo training run fixes one target per agent (a hill, or a circle
//! of the coordination game) and emits a sequence of trajectories whose
//! exploration noise decays linearly, so early trajectories look random and
//! late ones converge on the run's mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{CoordGameConfig, Env, HillWorldConfig, Position, Region, DEFAULT_EPISODE_LEN};
use crate::trajdata::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::{rng, Error, Result};

/// Spacing of `train_step` between consecutive trajectories of a run.
pub const CHECKPOINT_INTERVAL: u64 = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorPolicy {
    pub target: Position,
    pub noise_scale: f64,
    pub gain: f64,
    pub rng_seed: u64,
}

impl BehaviorPolicy {
    /// `clamp(gain * (target - position) + eps, +-max_step)`.
    pub fn act(&self, position: Position, max_step: f64, noise: &mut ChaCha8Rng) -> Position {
        let mut a = [0.0; 2];
        for k in 0..2 {
            let eps = if self.noise_scale > 0.0 {
                Normal::new(0.0, self.noise_scale).unwrap().sample(noise)
            } else {
                0.0
            };
            a[k] = (self.gain * (self.target[k] - position[k]) + eps).clamp(-max_step, max_step);
        }
        a
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Hill,
    Coord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeAssignment {
    UniformRandom,
    Enumerated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub domain: Domain,
    pub n_runs: usize,
    pub trajectories_per_run: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    pub mode_assignment: ModeAssignment,
    pub seed: u64,
    pub gain: f64,
    pub episode_len: usize,
    /// Adds the miscoordinated (B, B) joint mode to coordination corpora.
    pub include_miscoordinated: bool,
    pub hill: HillWorldConfig,
    pub coord: CoordGameConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Hill,
            n_runs: 50,
            trajectories_per_run: 40,
            noise_start: 0.3,
            noise_end: 0.0,
            mode_assignment: ModeAssignment::UniformRandom,
            seed: 0,
            gain: 1.0,
            episode_len: DEFAULT_EPISODE_LEN,
            include_miscoordinated: false,
            hill: HillWorldConfig::default(),
            coord: CoordGameConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 || self.trajectories_per_run == 0 || self.episode_len == 0 {
            return Err(Error::Config(
                "n_runs, trajectories_per_run and episode_len must be >= 1".into(),
            ));
        }
        if !(self.noise_start >= self.noise_end && self.noise_end >= 0.0) {
            return Err(Error::Config("require noise_start >= noise_end >= 0".into()));
        }
        self.env().validate()
    }

    pub fn env(&self) -> Env {
        match self.domain {
            Domain::Hill => Env::Hill(self.hill.clone()),
            Domain::Coord => Env::Coord(self.coord.clone()),
        }
    }

    /// Number of distinct per-agent target labels.
    fn n_joint_modes(&self) -> usize {
        match self.domain {
            Domain::Hill => self.hill.n_hills.pow(self.hill.n_agents as u32),
            Domain::Coord => coord_joint_modes(self.include_miscoordinated).len(),
        }
    }
}

/// The rewarding joint modes of the coordination game, optionally followed by
/// the miscoordinated (B, B).
pub fn coord_joint_modes(include_miscoordinated: bool) -> Vec<[Region; 2]> {
    let mut modes = vec![[Region::A, Region::A], [Region::A, Region::B], [Region::B, Region::A]];
    if include_miscoordinated {
        modes.push([Region::B, Region::B]);
    }
    modes
}

/// Per-agent mode label of one run: a hill index or a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModeLabel {
    Hill(usize),
    Region(Region),
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModeLabel::Hill(h) => write!(f, "{h}"),
            ModeLabel::Region(r) => write!(f, "{}", r.label()),
        }
    }
}

pub fn assign_run_modes(config: &CorpusConfig, rng: &mut impl Rng) -> Result<Vec<Vec<ModeLabel>>> {
    let n_modes = config.n_joint_modes();
    let joint: Vec<usize> = (0..config.n_runs)
        .map(|r| match config.mode_assignment {
            ModeAssignment::Enumerated => r % n_modes,
            ModeAssignment::UniformRandom => rng.random_range(0..n_modes),
        })
        .collect();
    Ok(joint
        .into_iter()
        .map(|code| match config.domain {
            Domain::Hill => {
                let h = config.hill.n_hills;
                let mut rest = code;
                (0..config.hill.n_agents)
                    .map(|_| {
                        let m = rest % h;
                        rest /= h;
                        ModeLabel::Hill(m)
                    })
                    .collect()
            }
            Domain::Coord => coord_joint_modes(config.include_miscoordinated)[code]
                .iter()
                .map(|&r| ModeLabel::Region(r))
                .collect(),
        })
        .collect())
}

fn target_of(label: ModeLabel, config: &CorpusConfig) -> Position {
    match label {
        ModeLabel::Hill(h) => config.hill.hill_centers()[h],
        ModeLabel::Region(r) => config.coord.region_center(r).unwrap_or([0.0, 0.0]),
    }
}

/// Rolls out one episode from the origin. Each policy draws its noise from
/// its own stream seeded by `rng_seed`.
pub fn rollout(policies: &[BehaviorPolicy], env: &Env, episode_len: usize) -> Result<Trajectory> {
    let n = env.n_agents();
    if policies.len() != n {
        return Err(Error::DimMismatch(format!(
            "{} policies for {n} agents",
            policies.len()
        )));
    }
    let mut noise: Vec<ChaCha8Rng> = policies.iter().map(|p| rng::seeded(p.rng_seed)).collect();
    let mut pos: Vec<Position> = vec![[0.0, 0.0]; n];
    let mut states = Vec::with_capacity(episode_len + 1);
    let mut actions = Vec::with_capacity(episode_len);
    let mut rewards = Vec::with_capacity(episode_len);
    states.push(flatten(&pos));
    for _ in 0..episode_len {
        let joint: Vec<Position> = policies
            .iter()
            .zip(&pos)
            .zip(noise.iter_mut())
            .map(|((pol, p), g)| pol.act(*p, env.max_step(), g))
            .collect();
        pos = env.step(&pos, &joint)?;
        rewards.push(env.rewards(&pos));
        actions.push(joint.iter().map(|a| a.to_vec()).collect());
        states.push(flatten(&pos));
    }
    Ok(Trajectory {
        run_id: String::new(),
        seed: 0,
        train_step: 0,
        states,
        actions,
        rewards: Some(rewards),
    })
}

fn flatten(pos: &[Position]) -> Vec<f64> {
    pos.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn run_id(run: usize, modes: &[ModeLabel]) -> String {
    let labels: Vec<String> = modes.iter().map(ToString::to_string).collect();
    format!("run{run}:modes={{{}}}", labels.join(","))
}

/// Parses `run{r}:modes={m1,..,mN}` back into the run index and labels.
pub fn parse_run_id(id: &str) -> Option<(usize, Vec<String>)> {
    let rest = id.strip_prefix("run")?;
    let (run, modes) = rest.split_once(":modes={")?;
    let modes = modes.strip_suffix('}')?;
    let run = run.parse().ok()?;
    Some((run, modes.split(',').map(str::to_string).collect()))
}

/// Everything before the `:` of a generated run id.
pub fn run_prefix(id: &str) -> &str {
    id.split(':').next().unwrap_or(id)
}

pub fn dataset_meta(config: &CorpusConfig) -> DatasetMeta {
    let n = config.env().n_agents();
    DatasetMeta {
        n_agents: n,
        state_dim: 2 * n,
        action_dims: vec![2; n],
        episode_len: config.episode_len,
        has_rewards: true,
    }
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<TrajectoryDataset> {
    generate_corpus_with_workers(config, 1)
}

/// Generates runs on up to `workers` threads; output order is by run index
/// regardless of scheduling.
pub fn generate_corpus_with_workers(config: &CorpusConfig, workers: usize) -> Result<TrajectoryDataset> {
    config.validate()?;
    let modes = assign_run_modes(config, &mut rng::seeded(rng::derive_seed(config.seed, u64::MAX)))?;
    let env = config.env();
    let gen_run = |r: usize| -> Result<Vec<Trajectory>> {
        let run_seed = rng::derive_seed(config.seed, r as u64);
        let targets: Vec<Position> = modes[r].iter().map(|&m| target_of(m, config)).collect();
        let id = run_id(r, &modes[r]);
        let k_max = config.trajectories_per_run.saturating_sub(1).max(1) as f64;
        (0..config.trajectories_per_run)
            .map(|k| {
                let frac = k as f64 / k_max;
                let noise = config.noise_start + (config.noise_end - config.noise_start) * frac;
                let traj_seed = rng::derive_seed(run_seed, k as u64);
                let policies: Vec<BehaviorPolicy> = targets
                    .iter()
                    .enumerate()
                    .map(|(i, &target)| BehaviorPolicy {
                        target,
                        noise_scale: noise,
                        gain: config.gain,
                        rng_seed: rng::derive_seed(traj_seed, i as u64),
                    })
                    .collect();
                let mut t = rollout(&policies, &env, config.episode_len)?;
                t.run_id = id.clone();
                t.seed = (traj_seed >> 1) as i64;
                t.train_step = k as u64 * CHECKPOINT_INTERVAL;
                Ok(t)
            })
            .collect()
    };
    let runs: Vec<Result<Vec<Trajectory>>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.n_runs).into_par_iter().map(gen_run).collect())
    } else {
        (0..config.n_runs).map(gen_run).collect()
    };
    let mut dataset = TrajectoryDataset::new(dataset_meta(config))?;
    for run in runs {
        for t in run? {
            dataset.push(t)?;
        }
    }
    Ok(dataset)
}

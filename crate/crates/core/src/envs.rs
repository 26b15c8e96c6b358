//! The two toy multiagent domains: hill climbing and the two-agent
//! coordination game. States are the concatenated 2-D agent positions
//! `[x_0, y_0, x_1, y_1, ..]` and each agent's action is a 2-D displacement.

use serde::{Deserialize, Serialize};

use crate::trajdata::{Trajectory, TrajectoryDataset};
use crate::{Error, Result};

pub type Position = [f64; 2];

/// Default episode length for both domains.
pub const DEFAULT_EPISODE_LEN: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HillWorldConfig {
    pub n_agents: usize,
    pub n_hills: usize,
    /// Distance of every hill center from the origin.
    pub hill_radius: f64,
    /// Width of each Gaussian bump.
    pub hill_width: f64,
    pub reward_scale: f64,
    pub arena_halfwidth: f64,
    pub max_step: f64,
}

impl Default for HillWorldConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            n_hills: 3,
            hill_radius: 1.0,
            hill_width: 0.3,
            reward_scale: 1.0,
            arena_halfwidth: 1.5,
            max_step: 0.1,
        }
    }
}

impl HillWorldConfig {
    /// Hill centers, equally spaced in angle starting at 90 degrees.
    pub fn hill_centers(&self) -> Vec<Position> {
        (0..self.n_hills)
            .map(|h| {
                let angle = std::f64::consts::FRAC_PI_2
                    + 2.0 * std::f64::consts::PI * h as f64 / self.n_hills as f64;
                [self.hill_radius * angle.cos(), self.hill_radius * angle.sin()]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_hills == 0 {
            return Err(Error::Config("hill world needs at least one agent and one hill".into()));
        }
        if !(self.hill_width > 0.0 && self.arena_halfwidth > 0.0 && self.max_step > 0.0) {
            return Err(Error::Config(
                "hill_width, arena_halfwidth and max_step must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Region of the coordination game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    A,
    B,
    C,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::A, Region::B, Region::C];

    pub fn index(self) -> usize {
        match self {
            Region::A => 0,
            Region::B => 1,
            Region::C => 2,
        }
    }

    pub fn label(self) -> char {
        match self {
            Region::A => 'A',
            Region::B => 'B',
            Region::C => 'C',
        }
    }
}

/// Per-timestep reward pairs indexed `[region of agent 0][region of agent 1]`.
pub const COORDINATION_PAYOFF: [[(f64, f64); 3]; 3] = [
    [(1.0, 1.0), (1.0, 1.0), (0.0, 0.0)],
    [(1.0, 1.0), (0.0, 0.0), (0.0, 0.0)],
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordGameConfig {
    pub center_a: Position,
    pub center_b: Position,
    pub radius_a: f64,
    pub radius_b: f64,
    pub payoff: [[(f64, f64); 3]; 3],
    pub arena_halfwidth: f64,
    pub max_step: f64,
}

impl Default for CoordGameConfig {
    fn default() -> Self {
        Self {
            center_a: [-0.6, 0.0],
            center_b: [0.6, 0.0],
            radius_a: 0.3,
            radius_b: 0.3,
            payoff: COORDINATION_PAYOFF,
            arena_halfwidth: 1.5,
            max_step: 0.1,
        }
    }
}

impl CoordGameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_a > 0.0 && self.radius_b > 0.0) {
            return Err(Error::Config("circle radii must be positive".into()));
        }
        if !(self.arena_halfwidth > 0.0 && self.max_step > 0.0) {
            return Err(Error::Config("arena_halfwidth and max_step must be positive".into()));
        }
        if distance(self.center_a, self.center_b) <= self.radius_a + self.radius_b {
            return Err(Error::Config("circles A and B must be disjoint".into()));
        }
        for (c, r) in [(self.center_a, self.radius_a), (self.center_b, self.radius_b)] {
            if c.iter().any(|v| v.abs() + r > self.arena_halfwidth) {
                return Err(Error::Config("circles must lie inside the arena".into()));
            }
        }
        Ok(())
    }

    pub fn region_center(&self, region: Region) -> Option<Position> {
        match region {
            Region::A => Some(self.center_a),
            Region::B => Some(self.center_b),
            Region::C => None,
        }
    }
}

fn distance(a: Position, b: Position) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn hill_reward(positions: &[Position], config: &HillWorldConfig) -> Vec<f64> {
    let centers = config.hill_centers();
    let denom = 2.0 * config.hill_width * config.hill_width;
    positions
        .iter()
        .map(|p| {
            let best = centers
                .iter()
                .map(|c| {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                    (-d2 / denom).exp()
                })
                .fold(0.0, f64::max);
            config.reward_scale * best
        })
        .collect()
}

/// Closed discs; A wins if the discs were configured to overlap.
pub fn coord_region(position: Position, config: &CoordGameConfig) -> Region {
    if distance(position, config.center_a) <= config.radius_a {
        Region::A
    } else if distance(position, config.center_b) <= config.radius_b {
        Region::B
    } else {
        Region::C
    }
}

pub fn coord_reward(region_0: Region, region_1: Region, config: &CoordGameConfig) -> (f64, f64) {
    config.payoff[region_0.index()][region_1.index()]
}

/// `p' = clamp(p + clamp(a, +-max_step), +-arena_halfwidth)` per axis.
pub fn env_step(
    positions: &[Position],
    joint_action: &[Position],
    arena_halfwidth: f64,
    max_step: f64,
) -> Result<Vec<Position>> {
    if positions.len() != joint_action.len() {
        return Err(Error::DimMismatch(format!(
            "{} positions but {} actions",
            positions.len(),
            joint_action.len()
        )));
    }
    Ok(positions
        .iter()
        .zip(joint_action)
        .map(|(p, a)| {
            let mut next = [0.0; 2];
            for k in 0..2 {
                let step = a[k].clamp(-max_step, max_step);
                next[k] = (p[k] + step).clamp(-arena_halfwidth, arena_halfwidth);
            }
            next
        })
        .collect())
}

/// Sum of agent distances from their centroid.
pub fn agent_dispersion(positions: &[Position]) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let n = positions.len() as f64;
    let cx = positions.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = positions.iter().map(|p| p[1]).sum::<f64>() / n;
    positions.iter().map(|p| distance(*p, [cx, cy])).sum()
}

/// Per-agent returns and their total.
pub fn trajectory_return(traj: &Trajectory) -> Result<(Vec<f64>, f64)> {
    let rewards = traj.rewards.as_ref().ok_or(Error::MissingRewards)?;
    let n = rewards.first().map_or(0, Vec::len);
    let mut per_agent = vec![0.0; n];
    for row in rewards {
        for (acc, r) in per_agent.iter_mut().zip(row) {
            *acc += r;
        }
    }
    let total = per_agent.iter().sum();
    Ok((per_agent, total))
}

/// Reads agent positions out of a flat state vector laid out as
/// `[x_0, y_0, x_1, y_1, ..]`.
pub fn positions_from_state(state: &[f64], n_agents: usize) -> Vec<Position> {
    (0..n_agents).map(|i| [state[2 * i], state[2 * i + 1]]).collect()
}

pub fn final_positions(traj: &Trajectory, n_agents: usize) -> Vec<Position> {
    positions_from_state(traj.states.last().expect("trajectory has states"), n_agents)
}

/// A domain as a pure transition/reward function pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Env {
    Hill(HillWorldConfig),
    Coord(CoordGameConfig),
}

impl Env {
    pub fn n_agents(&self) -> usize {
        match self {
            Env::Hill(c) => c.n_agents,
            Env::Coord(_) => 2,
        }
    }

    pub fn arena_halfwidth(&self) -> f64 {
        match self {
            Env::Hill(c) => c.arena_halfwidth,
            Env::Coord(c) => c.arena_halfwidth,
        }
    }

    pub fn max_step(&self) -> f64 {
        match self {
            Env::Hill(c) => c.max_step,
            Env::Coord(c) => c.max_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Env::Hill(c) => c.validate(),
            Env::Coord(c) => c.validate(),
        }
    }

    pub fn step(&self, positions: &[Position], joint_action: &[Position]) -> Result<Vec<Position>> {
        if positions.len() != self.n_agents() {
            return Err(Error::DimMismatch(format!(
                "{} positions for {} agents",
                positions.len(),
                self.n_agents()
            )));
        }
        env_step(positions, joint_action, self.arena_halfwidth(), self.max_step())
    }

    /// Reward each agent receives for occupying `positions`.
    pub fn rewards(&self, positions: &[Position]) -> Vec<f64> {
        match self {
            Env::Hill(c) => hill_reward(positions, c),
            Env::Coord(c) => {
                let r0 = coord_region(positions[0], c);
                let r1 = coord_region(positions[1], c);
                let (a, b) = coord_reward(r0, r1, c);
                vec![a, b]
            }
        }
    }
}

/// Return statistics of a corpus: the fraction of trajectories whose total
/// return falls below half the best observed total, plus a histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub n_trajectories: usize,
    pub min_total: f64,
    pub max_total: f64,
    pub mean_total: f64,
    pub fraction_below_half_max: f64,
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<usize>,
}

pub fn return_stats(dataset: &TrajectoryDataset, n_bins: usize) -> Result<ReturnStats> {
    let totals = dataset
        .trajectories
        .iter()
        .map(|t| trajectory_return(t).map(|r| r.1))
        .collect::<Result<Vec<_>>>()?;
    if totals.is_empty() {
        return Err(Error::InvalidArgument("no trajectories".into()));
    }
    let n_bins = n_bins.max(1);
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let below = totals.iter().filter(|&&r| r < 0.5 * max).count();
    let width = (max - min) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|b| min + width * b as f64).collect();
    let mut counts = vec![0usize; n_bins];
    for r in &totals {
        let b = if width > 0.0 {
            (((r - min) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(ReturnStats {
        n_trajectories: totals.len(),
        min_total: min,
        max_total: max,
        mean_total: mean,
        fraction_below_half_max: below as f64 / totals.len() as f64,
        histogram_edges: edges,
        histogram_counts: counts,
    })
}

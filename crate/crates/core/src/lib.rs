//! Offline analysis of multiagent behavior with a hierarchical latent model.
//!
//! The crate covers the whole pipeline: a JSON-lines trajectory format
//! ([`trajdata`]), two toy multiagent domains ([`envs`]) and scripted corpus
//! generation ([`behaviorgen`]), the hierarchical variational model itself
//! ([`hvae`]) with its training loop ([`training`]), the two comparison
//! models ([`baselines`]), and post-hoc analysis ([`evalmetrics`],
//! [`concepts`]).

pub mod baselines;
pub mod behaviorgen;
pub mod checkpoint;
pub mod concepts;
pub mod config;
pub mod envs;
mod error;
pub mod evalmetrics;
pub mod hvae;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod trajdata;
pub mod training;

pub use error::{Error, Result};
pub use hvae::{DiagGaussianParams, GMMParams, LatentSample, ModelConfig, MohbaModel};
pub use trajdata::{DatasetMeta, Trajectory, TrajectoryDataset};
pub use training::{MetricsLog, TrainConfig};

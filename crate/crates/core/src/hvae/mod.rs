//! The hierarchical latent model over joint and per-agent behavior.
//!
//! A trajectory is summarized twice: once jointly, into a mixture posterior
//! over `z_omega`, and once per agent, into a Gaussian posterior over
//! `z_alpha^i` whose prior is conditioned on `z_omega`. Actions are
//! reconstructed by a shared policy that only sees `z_alpha^i`.

pub(crate) mod blocks;
pub mod dist;
mod model;

pub use dist::{
    gaussian_kl, gmm_kl_mc, gmm_kl_mc_estimate, log_sum_exp, sample_gaussian, sample_gmm, softmax, DiagGaussianParams,
    GMMParams, McEstimate, LOG_STD_MAX, LOG_STD_MIN,
};
pub(crate) use model::{joint_pass, policy_params, TrajNoise};
pub use model::{ElboParts, LatentSample, ModelConfig, ModelHyperparams, MohbaModel};

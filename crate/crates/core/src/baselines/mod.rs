//! Comparison models: a causal next-action predictor whose final hidden
//! state serves as the trajectory embedding, and a single-level VAE whose
//! policy consumes `z_omega` directly.

mod flat_vae;
mod lstm;

pub use flat_vae::FlatVae;
pub use lstm::{LstmBaseline, LstmConfig, LstmHyperparams};

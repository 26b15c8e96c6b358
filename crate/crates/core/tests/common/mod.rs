#![allow(dead_code)]

use mohba::behaviorgen::{generate_corpus, CorpusConfig, Domain};
use mohba::hvae::ModelHyperparams;
use mohba::nn::ParamStore;
use mohba::training::Trainable;
use mohba::{rng, TrajectoryDataset};
use rand::Rng;

pub fn tiny_corpus(domain: Domain, episode_len: usize) -> TrajectoryDataset {
    let cfg = CorpusConfig {
        domain,
        n_runs: 2,
        trajectories_per_run: 3,
        noise_start: 0.3,
        noise_end: 0.1,
        episode_len,
        seed: 11,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg).unwrap()
}

pub fn tiny_hparams(kl_samples: usize) -> ModelHyperparams {
    ModelHyperparams {
        d_omega: 2,
        d_alpha: 2,
        gmm_components: 3,
        rnn_hidden: 4,
        mlp_hidden: 4,
        policy_hidden: 4,
        kl_samples,
    }
}

/// Shifts every parameter by a uniform draw from `+-0.1`, moving ReLU
/// preactivations off exact zeros where central differences would straddle
/// the kink.
pub fn jitter(params: &mut ParamStore, seed: u64) {
    let mut r = rng::seeded(seed);
    let flat: Vec<f64> = params.to_flat().iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
    params.set_flat(&flat);
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter scalar (relative to `max(|a|, |n|, 1e-6)`).
pub fn worst_gradient_error<M: Trainable>(
    model: &mut M,
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&M) -> f64,
) -> f64 {
    let base = model.params().to_flat();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut at = |delta: f64| {
            let mut p = base.clone();
            p[k] += delta;
            model.params_mut().set_flat(&p);
            loss(model)
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    model.params_mut().set_flat(&base);
    worst
}

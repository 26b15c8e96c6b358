//! Diagonal Gaussians and Gaussian mixtures over latent vectors.
//!
//! Besides the value-level operations, this module holds the derivative
//! formulas used by the batched lower-bound computation, so that both paths
//! evaluate densities with the same code.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn clamp_log_std(x: f64) -> f64 {
    x.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// 1 where the raw log-std lies strictly inside the clamp range, else 0.
pub(crate) fn clamp_mask(raw: f64) -> f64 {
    if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussianParams {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussianParams {
    /// Builds the distribution, clamping every log-std to `[-5, 2]`.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::DimMismatch(format!(
                "mean has {} dims, log_std {}",
                mean.len(),
                log_std.len()
            )));
        }
        Ok(Self {
            mean,
            log_std: log_std.into_iter().map(clamp_log_std).collect(),
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_std: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        gaussian_log_prob(x, &self.mean, &self.log_std)
    }
}

pub(crate) fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &s)| {
            let u = (x - m) * (-s).exp();
            -0.5 * u * u - s - HALF_LN_2PI
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GMMParams {
    pub logits: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub log_stds: Vec<Vec<f64>>,
}

impl GMMParams {
    pub fn new(logits: Vec<f64>, means: Vec<Vec<f64>>, log_stds: Vec<Vec<f64>>) -> Result<Self> {
        let m = logits.len();
        if m == 0 || means.len() != m || log_stds.len() != m {
            return Err(Error::DimMismatch(format!(
                "{m} logits, {} means, {} log_stds",
                means.len(),
                log_stds.len()
            )));
        }
        let d = means[0].len();
        if means.iter().chain(&log_stds).any(|v| v.len() != d) {
            return Err(Error::DimMismatch("mixture components differ in dimension".into()));
        }
        Ok(Self {
            logits,
            means,
            log_stds: log_stds
                .into_iter()
                .map(|v| v.into_iter().map(clamp_log_std).collect())
                .collect(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.logits.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn component(&self, m: usize) -> DiagGaussianParams {
        DiagGaussianParams {
            mean: self.means[m].clone(),
            log_std: self.log_stds[m].clone(),
        }
    }

    /// Mixture mean `sum_m w_m mu_m`.
    pub fn expected_value(&self) -> Vec<f64> {
        let w = self.weights();
        let mut out = vec![0.0; self.dim()];
        for (wm, mu) in w.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(mu) {
                *o += wm * v;
            }
        }
        out
    }

    pub fn log_prob(&self, z: &[f64]) -> f64 {
        let log_w = log_softmax(&self.logits);
        let terms: Vec<f64> = (0..self.n_components())
            .map(|m| log_w[m] + gaussian_log_prob(z, &self.means[m], &self.log_stds[m]))
            .collect();
        log_sum_exp(&terms)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Index of the component selected by a uniform draw `u` in `[0, 1)`.
pub(crate) fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (m, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return m;
        }
    }
    weights.len() - 1
}

pub(crate) fn standard_normals(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Randomness consumed by one mixture draw. Single-component mixtures skip
/// the uniform so that they reduce exactly to a Gaussian draw.
#[derive(Clone, Debug)]
pub(crate) struct MixtureNoise {
    pub u: f64,
    pub eps: Vec<f64>,
}

impl MixtureNoise {
    pub fn draw(n_components: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let u = if n_components > 1 { rng.random::<f64>() } else { 0.0 };
        Self {
            u,
            eps: standard_normals(dim, rng),
        }
    }
}

/// Reparameterized draw `mean + exp(log_std) * eps`, `eps ~ N(0, I)`.
pub fn sample_gaussian(params: &DiagGaussianParams, rng: &mut impl Rng) -> Vec<f64> {
    let eps = standard_normals(params.dim(), rng);
    reparam(&params.mean, &params.log_std, &eps)
}

pub(crate) fn reparam(mean: &[f64], log_std: &[f64], eps: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(log_std)
        .zip(eps)
        .map(|((m, s), e)| m + s.exp() * e)
        .collect()
}

/// Draws a component from `softmax(logits)`, then a reparameterized sample
/// from it.
pub fn sample_gmm(params: &GMMParams, rng: &mut impl Rng) -> Vec<f64> {
    let noise = MixtureNoise::draw(params.n_components(), params.dim(), rng);
    let m = pick_component(&params.weights(), noise.u);
    reparam(&params.means[m], &params.log_stds[m], &noise.eps)
}

/// Closed-form `KL(q || p)` between diagonal Gaussians, summed over dims.
pub fn gaussian_kl(q: &DiagGaussianParams, p: &DiagGaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimMismatch(format!("KL between dims {} and {}", q.dim(), p.dim())));
    }
    Ok(gaussian_kl_slices(&q.mean, &q.log_std, &p.mean, &p.log_std))
}

pub(crate) fn gaussian_kl_slices(mq: &[f64], sq: &[f64], mp: &[f64], sp: &[f64]) -> f64 {
    let mut kl = 0.0;
    for d in 0..mq.len() {
        let var_ratio = (2.0 * (sq[d] - sp[d])).exp();
        let diff = (mq[d] - mp[d]) * (-sp[d]).exp();
        kl += sp[d] - sq[d] + 0.5 * (var_ratio + diff * diff) - 0.5;
    }
    kl
}

/// Partial derivatives of the diagonal KL w.r.t. `(mu_q, s_q, mu_p, s_p)`,
/// scaled by `scale` and accumulated into the output slices.
pub(crate) fn gaussian_kl_grad(
    mq: &[f64],
    sq: &[f64],
    mp: &[f64],
    sp: &[f64],
    scale: f64,
    d_mq: &mut [f64],
    d_sq: &mut [f64],
    d_mp: &mut [f64],
    d_sp: &mut [f64],
) {
    for d in 0..mq.len() {
        let inv_var_p = (-2.0 * sp[d]).exp();
        let var_q = (2.0 * sq[d]).exp();
        let diff = mq[d] - mp[d];
        d_mq[d] += scale * diff * inv_var_p;
        d_mp[d] -= scale * diff * inv_var_p;
        d_sq[d] += scale * (var_q * inv_var_p - 1.0);
        d_sp[d] += scale * (1.0 - (var_q + diff * diff) * inv_var_p);
    }
}

/// Mixture log-density with gradients. `means` and `log_stds` are
/// row-major `M x D`. Derivatives are multiplied by `scale` and added into
/// the `d_*` buffers; `d_z` receives the derivative w.r.t. the point.
pub(crate) struct MixtureGrads<'a> {
    pub d_logits: &'a mut [f64],
    pub d_means: &'a mut [f64],
    pub d_log_stds: &'a mut [f64],
    pub d_z: &'a mut [f64],
}

pub(crate) fn gmm_log_prob_grad(
    z: &[f64],
    logits: &[f64],
    means: &[f64],
    log_stds: &[f64],
    scale: f64,
    out: MixtureGrads<'_>,
) -> f64 {
    let m_count = logits.len();
    let d = z.len();
    let log_w = log_softmax(logits);
    let terms: Vec<f64> = (0..m_count)
        .map(|m| log_w[m] + gaussian_log_prob(z, &means[m * d..(m + 1) * d], &log_stds[m * d..(m + 1) * d]))
        .collect();
    let lse = log_sum_exp(&terms);
    for m in 0..m_count {
        let resp = (terms[m] - lse).exp();
        let w = log_w[m].exp();
        out.d_logits[m] += scale * (resp - w);
        for k in 0..d {
            let idx = m * d + k;
            let inv_var = (-2.0 * log_stds[idx]).exp();
            let diff = z[k] - means[idx];
            out.d_means[idx] += scale * resp * diff * inv_var;
            out.d_log_stds[idx] += scale * resp * (diff * diff * inv_var - 1.0);
            out.d_z[k] -= scale * resp * diff * inv_var;
        }
    }
    lse
}

/// Monte Carlo estimate of `KL(q || p)` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// `(1/S) sum_s [log q(z_s) - log p(z_s)]` with `z_s ~ q`.
pub fn gmm_kl_mc(q: &GMMParams, p: &GMMParams, n_samples: usize, rng: &mut impl Rng) -> Result<f64> {
    gmm_kl_mc_estimate(q, p, n_samples, rng).map(|e| e.mean)
}

pub fn gmm_kl_mc_estimate(
    q: &GMMParams,
    p: &GMMParams,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<McEstimate> {
    if q.dim() != p.dim() {
        return Err(Error::DimMismatch(format!("KL between dims {} and {}", q.dim(), p.dim())));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let z = sample_gmm(q, rng);
        let v = q.log_prob(&z) - p.log_prob(&z);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_err: (var / n).sqrt(),
    })
}

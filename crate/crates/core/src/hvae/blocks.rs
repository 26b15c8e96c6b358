//! Building blocks shared by the hierarchical model and the flat VAE:
//! batched sequence inputs, the mixture-headed joint encoder, the free
//! mixture prior and the Gaussian policy head.

use ndarray::{s, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{clamp_log_std, clamp_mask, gmm_log_prob_grad, MixtureGrads, HALF_LN_2PI};
use super::GMMParams;
use crate::nn::{BiLstm, BiLstmCache, Grads, Mlp, MlpCache, ParamId, ParamStore, Tensor};
use crate::trajdata::{DatasetMeta, Trajectory};
use crate::{Error, Result};

/// Time-major views of a batch of equal-length trajectories.
///
/// Row `t * B + b` of `states` / `joint_x` belongs to trajectory `b` at step
/// `t`; per-agent rows are `(t * B + b) * N + i`. Actions are zero-padded to
/// the widest agent action.
pub(crate) struct SeqBatch {
    pub steps: usize,
    pub batch: usize,
    pub n_agents: usize,
    pub state_dim: usize,
    pub max_action: usize,
    pub states: Tensor,
    pub joint_x: Tensor,
    pub actions: Tensor,
}

pub(crate) fn meta_for(
    n_agents: usize,
    state_dim: usize,
    action_dims: &[usize],
    traj: &Trajectory,
) -> DatasetMeta {
    DatasetMeta {
        n_agents,
        state_dim,
        action_dims: action_dims.to_vec(),
        episode_len: traj.actions.len(),
        has_rewards: traj.rewards.is_some(),
    }
}

impl SeqBatch {
    pub fn new(trajs: &[&Trajectory], n_agents: usize, state_dim: usize, action_dims: &[usize]) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let steps = first.actions.len();
        if steps == 0 {
            return Err(Error::DimMismatch("trajectory has no steps".into()));
        }
        for (index, traj) in trajs.iter().enumerate() {
            if traj.actions.len() != steps {
                return Err(Error::DimMismatch(format!(
                    "batch mixes episode lengths {} and {}",
                    steps,
                    traj.actions.len()
                )));
            }
            traj.conformance(&meta_for(n_agents, state_dim, action_dims, traj))
                .map_err(|reason| Error::Shape { index, reason })?;
        }
        let batch = trajs.len();
        let max_action = action_dims.iter().copied().max().unwrap_or(0);
        let joint_dim: usize = action_dims.iter().sum();
        let mut states = Tensor::zeros((steps * batch, state_dim));
        let mut joint_x = Tensor::zeros((steps * batch, state_dim + joint_dim));
        let mut actions = Tensor::zeros((steps * batch * n_agents, max_action));
        for t in 0..steps {
            for (b, traj) in trajs.iter().enumerate() {
                let row = t * batch + b;
                let mut col = 0;
                for (k, &v) in traj.states[t].iter().enumerate() {
                    states[[row, k]] = v;
                    joint_x[[row, k]] = v;
                }
                col += state_dim;
                for (i, a) in traj.actions[t].iter().enumerate() {
                    for (k, &v) in a.iter().enumerate() {
                        joint_x[[row, col + k]] = v;
                        actions[[row * n_agents + i, k]] = v;
                    }
                    col += a.len();
                }
            }
        }
        Ok(Self {
            steps,
            batch,
            n_agents,
            state_dim,
            max_action,
            states,
            joint_x,
            actions,
        })
    }

    pub fn agent_rows(&self) -> usize {
        self.steps * self.batch * self.n_agents
    }

    /// Per-agent encoder input `[s_t | a_t^i | onehot(i)]`, laid out as
    /// `B * N` sequences.
    pub fn local_inputs(&self) -> Tensor {
        let (s, a, n) = (self.state_dim, self.max_action, self.n_agents);
        let mut x = Tensor::zeros((self.agent_rows(), s + a + n));
        for row in 0..self.steps * self.batch {
            for i in 0..n {
                let r = row * n + i;
                x.slice_mut(s![r, ..s]).assign(&self.states.row(row));
                x.slice_mut(s![r, s..s + a]).assign(&self.actions.row(r));
                x[[r, s + a + i]] = 1.0;
            }
        }
        x
    }

    /// Policy input `[s_t | z_{b,i} | onehot(i)]` where `z` has one row per
    /// `(b, i)` pair.
    pub fn policy_inputs(&self, z: ArrayView2<f64>) -> Tensor {
        policy_inputs(&self.states, z, self.steps, self.batch, self.n_agents)
    }
}

pub(crate) fn policy_inputs(
    states: &Tensor,
    z: ArrayView2<f64>,
    steps: usize,
    batch: usize,
    n_agents: usize,
) -> Tensor {
    let (sd, zd, n) = (states.ncols(), z.ncols(), n_agents);
    let mut x = Tensor::zeros((steps * batch * n, sd + zd + n));
    for t in 0..steps {
        for b in 0..batch {
            let row = t * batch + b;
            for i in 0..n {
                let r = row * n + i;
                x.slice_mut(s![r, ..sd]).assign(&states.row(row));
                x.slice_mut(s![r, sd..sd + zd]).assign(&z.row(b * n + i));
                x[[r, sd + zd + i]] = 1.0;
            }
        }
    }
    x
}

/// Sums the `z` block of a policy-input gradient back onto the `(b, i)` rows.
pub(crate) fn policy_dz(dx: &Tensor, state_dim: usize, zd: usize, steps: usize, pairs: usize) -> Tensor {
    let mut dz = Tensor::zeros((pairs, zd));
    for t in 0..steps {
        let block = dx.slice(s![t * pairs..(t + 1) * pairs, state_dim..state_dim + zd]);
        dz += &block;
    }
    dz
}

/// Bidirectional recurrent encoder with an MLP head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct SeqEncoder {
    pub rnn: BiLstm,
    pub head: Mlp,
}

pub(crate) struct SeqEncoderCache {
    rnn: BiLstmCache,
    head: MlpCache,
}

impl SeqEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        rnn_hidden: usize,
        mlp_hidden: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let rnn = BiLstm::new(store, &format!("{name}.rnn"), input, rnn_hidden, rng);
        let head = Mlp::new(
            store,
            &format!("{name}.head"),
            &[2 * rnn_hidden, mlp_hidden, mlp_hidden, out],
            rng,
        );
        Self { rnn, head }
    }

    pub fn forward(&self, p: &ParamStore, x: Tensor, steps: usize, batch: usize) -> (Tensor, SeqEncoderCache) {
        let (summary, rnn) = self.rnn.forward(p, x, steps, batch);
        let (out, head) = self.head.forward(p, summary);
        (out, SeqEncoderCache { rnn, head })
    }

    pub fn predict(&self, p: &ParamStore, x: Tensor, steps: usize, batch: usize) -> Tensor {
        self.forward(p, x, steps, batch).0
    }

    pub fn backward(&self, p: &ParamStore, g: &mut Grads, cache: &SeqEncoderCache, d_out: Tensor) {
        let d_summary = self.head.backward(p, g, &cache.head, d_out, true).expect("requested dx");
        self.rnn.backward(p, g, &cache.rnn, d_summary.view());
    }
}

/// Splits a `[mean | raw log-std]` row pair into clamped Gaussian parameters.
pub(crate) fn gaussian_row(row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = row.len() / 2;
    (row[..d].to_vec(), row[d..].iter().map(|&v| clamp_log_std(v)).collect())
}

/// Layout of a mixture head output: `[logits (M) | means (M*D) | raw log-stds (M*D)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct MixtureLayout {
    pub m: usize,
    pub d: usize,
}

impl MixtureLayout {
    pub fn width(&self) -> usize {
        self.m * (1 + 2 * self.d)
    }

    pub fn split<'a>(&self, row: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let md = self.m * self.d;
        (&row[..self.m], &row[self.m..self.m + md], &row[self.m + md..])
    }

    pub fn params(&self, row: &[f64]) -> GMMParams {
        let (logits, means, raw) = self.split(row);
        GMMParams {
            logits: logits.to_vec(),
            means: means.chunks(self.d).map(<[f64]>::to_vec).collect(),
            log_stds: raw
                .chunks(self.d)
                .map(|c| c.iter().map(|&v| clamp_log_std(v)).collect())
                .collect(),
        }
    }
}

/// Free (input-independent) mixture prior over `z_omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct MixturePrior {
    pub logits: ParamId,
    pub means: ParamId,
    pub log_stds: ParamId,
    pub layout: MixtureLayout,
}

impl MixturePrior {
    pub fn new(store: &mut ParamStore, name: &str, m: usize, d: usize, rng: &mut impl Rng) -> Self {
        let logits = store.add(format!("{name}.logits"), Tensor::zeros((1, m)));
        let means = store.add(
            format!("{name}.means"),
            Tensor::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0)),
        );
        let log_stds = store.add(format!("{name}.log_stds"), Tensor::zeros((m, d)));
        Self {
            logits,
            means,
            log_stds,
            layout: MixtureLayout { m, d },
        }
    }

    pub fn params(&self, p: &ParamStore) -> GMMParams {
        let row: Vec<f64> = [self.logits, self.means, self.log_stds]
            .iter()
            .flat_map(|&id| p.get(id).iter().copied().collect::<Vec<_>>())
            .collect();
        self.layout.params(&row)
    }

    /// Flattened `(logits, means, clamped log-stds)`.
    pub fn flat(&self, p: &ParamStore) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let flat = |id| p.get(id).iter().copied().collect::<Vec<f64>>();
        let ls = flat(self.log_stds).into_iter().map(clamp_log_std).collect();
        (flat(self.logits), flat(self.means), ls)
    }
}

/// Per-trajectory randomness of one `KL(q(z_omega) || p(z_omega))` estimate.
pub(crate) struct JointKlTerm<'a> {
    pub q_logits: &'a [f64],
    pub q_means: &'a [f64],
    pub q_log_stds: &'a [f64],
    pub p_logits: &'a [f64],
    pub p_means: &'a [f64],
    pub p_log_stds: &'a [f64],
}

/// Gradient sinks for [`joint_kl_mc`]: posterior head outputs for one
/// trajectory and the prior's flattened parameters.
pub(crate) struct JointKlGrads<'a> {
    pub q_logits: &'a mut [f64],
    pub q_means: &'a mut [f64],
    pub q_log_stds: &'a mut [f64],
    pub p_logits: &'a mut [f64],
    pub p_means: &'a mut [f64],
    pub p_log_stds: &'a mut [f64],
}

/// Monte Carlo joint KL from pre-drawn mixture noise. With `grads`, adds
/// `scale / S` times the derivative of every sample term (pathwise through
/// the selected posterior component, plus both density terms).
pub(crate) fn joint_kl_mc(
    term: &JointKlTerm<'_>,
    noise: &[super::dist::MixtureNoise],
    scale: f64,
    mut grads: Option<JointKlGrads<'_>>,
) -> f64 {
    let d = term.q_means.len() / term.q_logits.len();
    let weights = super::dist::softmax(term.q_logits);
    let n = noise.len() as f64;
    let per = scale / n;
    let mut total = 0.0;
    for nz in noise {
        let k = super::dist::pick_component(&weights, nz.u);
        let mu = &term.q_means[k * d..(k + 1) * d];
        let ls = &term.q_log_stds[k * d..(k + 1) * d];
        let z = super::dist::reparam(mu, ls, &nz.eps);
        match grads.as_mut() {
            Some(gr) => {
                let mut dz = vec![0.0; d];
                let lq = gmm_log_prob_grad(
                    &z,
                    term.q_logits,
                    term.q_means,
                    term.q_log_stds,
                    per,
                    MixtureGrads {
                        d_logits: gr.q_logits,
                        d_means: gr.q_means,
                        d_log_stds: gr.q_log_stds,
                        d_z: &mut dz,
                    },
                );
                let lp = gmm_log_prob_grad(
                    &z,
                    term.p_logits,
                    term.p_means,
                    term.p_log_stds,
                    -per,
                    MixtureGrads {
                        d_logits: gr.p_logits,
                        d_means: gr.p_means,
                        d_log_stds: gr.p_log_stds,
                        d_z: &mut dz,
                    },
                );
                for j in 0..d {
                    gr.q_means[k * d + j] += dz[j];
                    gr.q_log_stds[k * d + j] += dz[j] * ls[j].exp() * nz.eps[j];
                }
                total += lq - lp;
            }
            None => {
                let q = mixture_log_prob(&z, term.q_logits, term.q_means, term.q_log_stds);
                let p = mixture_log_prob(&z, term.p_logits, term.p_means, term.p_log_stds);
                total += q - p;
            }
        }
    }
    total / n
}

fn mixture_log_prob(z: &[f64], logits: &[f64], means: &[f64], log_stds: &[f64]) -> f64 {
    let d = z.len();
    let log_w = super::dist::log_softmax(logits);
    let terms: Vec<f64> = (0..logits.len())
        .map(|m| {
            log_w[m] + super::dist::gaussian_log_prob(z, &means[m * d..(m + 1) * d], &log_stds[m * d..(m + 1) * d])
        })
        .collect();
    super::dist::log_sum_exp(&terms)
}

/// Log-likelihood of padded actions under the policy head output
/// `[mean (A) | raw log-std (A)]`, summed per trajectory. When `coef` is
/// given, also returns `coef` times the derivative w.r.t. the raw output.
pub(crate) fn policy_log_likelihood(
    out: &Tensor,
    actions: &Tensor,
    action_dims: &[usize],
    batch: usize,
    coef: Option<f64>,
) -> (Vec<f64>, Option<Tensor>) {
    let n = action_dims.len();
    let a = actions.ncols();
    let mut per_traj = vec![0.0; batch];
    let mut d_out = coef.map(|_| Tensor::zeros(out.raw_dim()));
    for r in 0..out.nrows() {
        let i = r % n;
        let b = (r / n) % batch;
        let o = out.row(r);
        let mut lp = 0.0;
        for k in 0..action_dims[i] {
            let raw = o[a + k];
            let ls = clamp_log_std(raw);
            let inv_std = (-ls).exp();
            let u = (actions[[r, k]] - o[k]) * inv_std;
            lp += -0.5 * u * u - ls - HALF_LN_2PI;
            if let (Some(d), Some(c)) = (d_out.as_mut(), coef) {
                d[[r, k]] = c * u * inv_std;
                d[[r, a + k]] = c * (u * u - 1.0) * clamp_mask(raw);
            }
        }
        per_traj[b] += lp;
    }
    (per_traj, d_out)
}

/// Squared error between policy means and actions, summed per trajectory.
pub(crate) fn policy_sq_error(out: &Tensor, actions: &Tensor, action_dims: &[usize], batch: usize) -> Vec<f64> {
    let n = action_dims.len();
    let mut per_traj = vec![0.0; batch];
    for r in 0..out.nrows() {
        let i = r % n;
        let b = (r / n) % batch;
        for k in 0..action_dims[i] {
            let e = out[[r, k]] - actions[[r, k]];
            per_traj[b] += e * e;
        }
    }
    per_traj
}

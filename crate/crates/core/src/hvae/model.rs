use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{
    gaussian_row, joint_kl_mc, meta_for, policy_dz, policy_inputs, policy_log_likelihood, policy_sq_error,
    JointKlGrads, JointKlTerm, MixtureLayout, MixturePrior, SeqBatch, SeqEncoder,
};
use super::dist::{
    clamp_log_std, clamp_mask, gaussian_kl_grad, gaussian_kl_slices, pick_component, reparam, softmax,
    standard_normals, MixtureNoise,
};
use super::{DiagGaussianParams, GMMParams};
use crate::nn::{Grads, Mlp, ParamStore, Tensor};
use crate::trajdata::{DatasetMeta, Trajectory};
use crate::{rng, Error, Result};

/// Architecture settings that do not depend on the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelHyperparams {
    pub d_omega: usize,
    pub d_alpha: usize,
    pub gmm_components: usize,
    pub rnn_hidden: usize,
    pub mlp_hidden: usize,
    pub policy_hidden: usize,
    /// Monte Carlo samples for the joint KL term.
    pub kl_samples: usize,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        Self {
            d_omega: 8,
            d_alpha: 8,
            gmm_components: 8,
            rnn_hidden: 64,
            mlp_hidden: 64,
            policy_hidden: 32,
            kl_samples: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_omega: usize,
    pub d_alpha: usize,
    pub gmm_components: usize,
    pub rnn_hidden: usize,
    pub mlp_hidden: usize,
    pub policy_hidden: usize,
    pub kl_samples: usize,
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_dims: Vec<usize>,
}

impl ModelConfig {
    pub fn new(hp: &ModelHyperparams, meta: &DatasetMeta) -> Self {
        Self {
            d_omega: hp.d_omega,
            d_alpha: hp.d_alpha,
            gmm_components: hp.gmm_components,
            rnn_hidden: hp.rnn_hidden,
            mlp_hidden: hp.mlp_hidden,
            policy_hidden: hp.policy_hidden,
            kl_samples: hp.kl_samples,
            n_agents: meta.n_agents,
            state_dim: meta.state_dim,
            action_dims: meta.action_dims.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_omega", self.d_omega),
            ("d_alpha", self.d_alpha),
            ("gmm_components", self.gmm_components),
            ("rnn_hidden", self.rnn_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("policy_hidden", self.policy_hidden),
            ("kl_samples", self.kl_samples),
            ("n_agents", self.n_agents),
            ("state_dim", self.state_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be >= 1")));
        }
        if self.action_dims.len() != self.n_agents || self.action_dims.contains(&0) {
            return Err(Error::Config(format!(
                "model.action_dims must list {} positive sizes",
                self.n_agents
            )));
        }
        Ok(())
    }

    /// Errors unless the dataset has this model's agent count and shapes.
    pub fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        if meta.n_agents != self.n_agents || meta.state_dim != self.state_dim || meta.action_dims != self.action_dims {
            return Err(Error::DimMismatch(format!(
                "model expects {} agents, state dim {}, action dims {:?}; dataset has {}, {}, {:?}",
                self.n_agents, self.state_dim, self.action_dims, meta.n_agents, meta.state_dim, meta.action_dims
            )));
        }
        Ok(())
    }

    pub fn max_action_dim(&self) -> usize {
        self.action_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn joint_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }

    pub(crate) fn mixture(&self) -> MixtureLayout {
        MixtureLayout {
            m: self.gmm_components,
            d: self.d_omega,
        }
    }

    fn batch(&self, trajs: &[&Trajectory]) -> Result<SeqBatch> {
        SeqBatch::new(trajs, self.n_agents, self.state_dim, &self.action_dims)
    }

    fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        traj.conformance(&meta_for(self.n_agents, self.state_dim, &self.action_dims, traj))
            .map_err(|reason| Error::Shape { index: 0, reason })
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.n_agents {
            return Err(Error::InvalidArgument(format!(
                "agent index {agent} out of range for {} agents",
                self.n_agents
            )));
        }
        Ok(())
    }
}

/// Latent draws for one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub z_omega: Vec<f64>,
    /// `N x D_alpha`.
    pub z_alpha: Vec<Vec<f64>>,
}

/// Batch-mean lower-bound terms. `kl_local` is absent for models without
/// per-agent latents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboParts {
    pub loss: f64,
    pub recon: f64,
    pub kl_local: Option<f64>,
    pub kl_joint: f64,
}

impl ElboParts {
    pub(crate) fn from_sums(recon: f64, kl_local: Option<f64>, kl_joint: f64, batch: usize, beta: f64) -> Self {
        let n = batch as f64;
        let (recon, kl_local, kl_joint) = (recon / n, kl_local.map(|k| k / n), kl_joint / n);
        let loss = -(recon - beta * (kl_local.unwrap_or(0.0) + kl_joint));
        Self {
            loss,
            recon,
            kl_local,
            kl_joint,
        }
    }
}

/// Noise consumed by one trajectory of a lower-bound evaluation, drawn in
/// the order: joint latent, each agent's local latent, joint KL samples.
pub(crate) struct TrajNoise {
    pub joint: MixtureNoise,
    pub local: Vec<Vec<f64>>,
    pub kl: Vec<MixtureNoise>,
}

impl TrajNoise {
    pub fn draw(cfg: &ModelConfig, with_local: bool, rng: &mut impl Rng) -> Self {
        let joint = MixtureNoise::draw(cfg.gmm_components, cfg.d_omega, rng);
        let local = if with_local {
            (0..cfg.n_agents).map(|_| standard_normals(cfg.d_alpha, rng)).collect()
        } else {
            Vec::new()
        };
        let kl = (0..cfg.kl_samples)
            .map(|_| MixtureNoise::draw(cfg.gmm_components, cfg.d_omega, rng))
            .collect();
        Self { joint, local, kl }
    }
}

/// Joint-latent half of the lower bound, shared with the flat VAE: samples
/// `z_omega` for every trajectory and evaluates the joint KL. With `grads`,
/// the KL gradient (scaled by `kl_coef`) is accumulated immediately and the
/// returned closure state lets callers add the `z_omega` pathwise gradient.
pub(crate) struct JointPass {
    pub out: Tensor,
    pub z_omega: Tensor,
    pub picks: Vec<usize>,
    pub kl_sum: f64,
    /// Gradient w.r.t. the raw joint head output, before clamp masks.
    pub d_out: Option<Tensor>,
}

pub(crate) fn joint_pass(
    cfg: &ModelConfig,
    prior: &MixturePrior,
    p: &ParamStore,
    out: Tensor,
    noise: &[TrajNoise],
    kl_coef: f64,
    mut g: Option<&mut Grads>,
) -> JointPass {
    let lay = cfg.mixture();
    let (m, d) = (lay.m, lay.d);
    let batch = out.nrows();
    let (p_logits, p_means, p_ls) = prior.flat(p);
    let mut z_omega = Tensor::zeros((batch, d));
    let mut picks = Vec::with_capacity(batch);
    let mut kl_sum = 0.0;
    let mut d_out = g.as_ref().map(|_| Tensor::zeros(out.raw_dim()));
    let (mut dp_logits, mut dp_means, mut dp_ls) = (vec![0.0; m], vec![0.0; m * d], vec![0.0; m * d]);
    for b in 0..batch {
        let row = out.row(b);
        let row = row.as_slice().expect("contiguous row");
        let (logits, means, raw) = lay.split(row);
        let ls: Vec<f64> = raw.iter().map(|&v| clamp_log_std(v)).collect();
        let k = pick_component(&softmax(logits), noise[b].joint.u);
        picks.push(k);
        let z = reparam(&means[k * d..(k + 1) * d], &ls[k * d..(k + 1) * d], &noise[b].joint.eps);
        z_omega.row_mut(b).assign(&ndarray::ArrayView1::from(&z));
        let term = JointKlTerm {
            q_logits: logits,
            q_means: means,
            q_log_stds: &ls,
            p_logits: &p_logits,
            p_means: &p_means,
            p_log_stds: &p_ls,
        };
        let kl = match d_out.as_mut() {
            Some(dout) => {
                let mut drow = dout.row_mut(b);
                let drow = drow.as_slice_mut().expect("contiguous row");
                let (dl, rest) = drow.split_at_mut(m);
                let (dm, ds) = rest.split_at_mut(m * d);
                joint_kl_mc(
                    &term,
                    &noise[b].kl,
                    kl_coef,
                    Some(JointKlGrads {
                        q_logits: dl,
                        q_means: dm,
                        q_log_stds: ds,
                        p_logits: &mut dp_logits,
                        p_means: &mut dp_means,
                        p_log_stds: &mut dp_ls,
                    }),
                )
            }
            None => joint_kl_mc(&term, &noise[b].kl, kl_coef, None),
        };
        kl_sum += kl;
    }
    if let Some(g) = g.as_mut() {
        let raw_prior_ls = p.get(prior.log_stds);
        for (k, v) in g.get_mut(prior.logits).iter_mut().enumerate() {
            *v += dp_logits[k];
        }
        for (k, v) in g.get_mut(prior.means).iter_mut().enumerate() {
            *v += dp_means[k];
        }
        for ((v, dv), raw) in g.get_mut(prior.log_stds).iter_mut().zip(&dp_ls).zip(raw_prior_ls.iter()) {
            *v += dv * clamp_mask(*raw);
        }
    }
    JointPass {
        out,
        z_omega,
        picks,
        kl_sum,
        d_out,
    }
}

impl JointPass {
    /// Adds the reparameterization gradient of `z_omega`, then applies the
    /// clamp masks; returns the finished head-output gradient.
    pub fn finish(mut self, cfg: &ModelConfig, noise: &[TrajNoise], dz: &Tensor) -> Tensor {
        let lay = cfg.mixture();
        let (m, d) = (lay.m, lay.d);
        let mut d_out = self.d_out.take().expect("gradient pass");
        for b in 0..self.out.nrows() {
            let k = self.picks[b];
            for j in 0..d {
                let mi = m + k * d + j;
                let si = m + m * d + k * d + j;
                let ls = clamp_log_std(self.out[[b, si]]);
                d_out[[b, mi]] += dz[[b, j]];
                d_out[[b, si]] += dz[[b, j]] * ls.exp() * noise[b].joint.eps[j];
            }
            for idx in m + m * d..lay.width() {
                d_out[[b, idx]] *= clamp_mask(self.out[[b, idx]]);
            }
        }
        d_out
    }
}

/// The hierarchical behavior model: a mixture-headed joint encoder and free
/// mixture prior over `z_omega`, a shared local encoder and local prior over
/// each `z_alpha^i`, and a shared Gaussian policy conditioned on `z_alpha^i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MohbaModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    joint_encoder: SeqEncoder,
    local_encoder: SeqEncoder,
    local_prior: Mlp,
    joint_prior: MixturePrior,
    policy: Mlp,
}

impl MohbaModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut r = rng::seeded(seed);
        let mut params = ParamStore::new();
        let (s, n, a) = (c.state_dim, c.n_agents, c.max_action_dim());
        let joint_encoder = SeqEncoder::new(
            &mut params,
            "joint_encoder",
            s + c.joint_action_dim(),
            c.rnn_hidden,
            c.mlp_hidden,
            c.mixture().width(),
            &mut r,
        );
        let local_encoder = SeqEncoder::new(
            &mut params,
            "local_encoder",
            s + a + n,
            c.rnn_hidden,
            c.mlp_hidden,
            2 * c.d_alpha,
            &mut r,
        );
        let local_prior = Mlp::new(
            &mut params,
            "local_prior",
            &[c.d_omega + n, c.mlp_hidden, c.mlp_hidden, 2 * c.d_alpha],
            &mut r,
        );
        let joint_prior = MixturePrior::new(&mut params, "joint_prior", c.gmm_components, c.d_omega, &mut r);
        let policy = Mlp::new(
            &mut params,
            "policy",
            &[s + c.d_alpha + n, c.policy_hidden, c.policy_hidden, 2 * a],
            &mut r,
        );
        Ok(Self {
            config,
            params,
            joint_encoder,
            local_encoder,
            local_prior,
            joint_prior,
            policy,
        })
    }

    pub fn joint_prior(&self) -> GMMParams {
        self.joint_prior.params(&self.params)
    }

    pub fn encode_joint(&self, traj: &Trajectory) -> Result<GMMParams> {
        self.config.check_traj(traj)?;
        let b = self.config.batch(&[traj])?;
        let out = self.joint_encoder.predict(&self.params, b.joint_x, b.steps, 1);
        Ok(self.config.mixture().params(out.row(0).as_slice().expect("contiguous row")))
    }

    pub fn encode_local(&self, traj: &Trajectory, agent: usize) -> Result<DiagGaussianParams> {
        self.config.check_agent(agent)?;
        Ok(self.encode_local_all(traj)?.swap_remove(agent))
    }

    /// Local posteriors of every agent of one trajectory.
    pub fn encode_local_all(&self, traj: &Trajectory) -> Result<Vec<DiagGaussianParams>> {
        self.config.check_traj(traj)?;
        let b = self.config.batch(&[traj])?;
        let out = self
            .local_encoder
            .predict(&self.params, b.local_inputs(), b.steps, self.config.n_agents);
        Ok(out.rows().into_iter().map(|r| gaussian_params(r.as_slice().unwrap())).collect())
    }

    pub fn local_prior(&self, z_omega: &[f64], agent: usize) -> Result<DiagGaussianParams> {
        self.config.check_agent(agent)?;
        if z_omega.len() != self.config.d_omega {
            return Err(Error::DimMismatch(format!(
                "z_omega has {} dims, model uses {}",
                z_omega.len(),
                self.config.d_omega
            )));
        }
        let n = self.config.n_agents;
        let mut x = Tensor::zeros((1, z_omega.len() + n));
        for (k, &v) in z_omega.iter().enumerate() {
            x[[0, k]] = v;
        }
        x[[0, z_omega.len() + agent]] = 1.0;
        let out = self.local_prior.predict(&self.params, x.view());
        Ok(gaussian_params(out.row(0).as_slice().unwrap()))
    }

    /// Action distribution of agent `agent` at `state` given `z_alpha`.
    pub fn policy(&self, state: &[f64], z_alpha: &[f64], agent: usize) -> Result<DiagGaussianParams> {
        self.config.check_agent(agent)?;
        let c = &self.config;
        if state.len() != c.state_dim || z_alpha.len() != c.d_alpha {
            return Err(Error::DimMismatch(format!(
                "policy expects state dim {} and z_alpha dim {}, got {} and {}",
                c.state_dim,
                c.d_alpha,
                state.len(),
                z_alpha.len()
            )));
        }
        let states = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row shape");
        let mut z = Tensor::zeros((c.n_agents, c.d_alpha));
        z.row_mut(agent).assign(&ndarray::ArrayView1::from(z_alpha));
        let x = policy_inputs(&states, z.view(), 1, 1, c.n_agents);
        let x = x.slice(s![agent..agent + 1, ..]);
        let out = self.policy.predict(&self.params, x);
        Ok(policy_params(out.row(0).as_slice().unwrap(), c.action_dims[agent]))
    }

    pub fn policy_log_prob(&self, state: &[f64], action: &[f64], z_alpha: &[f64], agent: usize) -> Result<f64> {
        let dist = self.policy(state, z_alpha, agent)?;
        if action.len() != dist.dim() {
            return Err(Error::DimMismatch(format!(
                "agent {agent} acts in {} dims, got {}",
                dist.dim(),
                action.len()
            )));
        }
        Ok(dist.log_prob(action))
    }

    /// Lower-bound terms on a batch, drawing noise from `rng` per
    /// trajectory in order: `z_omega`, each `z_alpha^i`, the joint KL samples.
    pub fn elbo(&self, batch: &[Trajectory], beta: f64, rng: &mut impl Rng) -> Result<ElboParts> {
        let refs: Vec<&Trajectory> = batch.iter().collect();
        self.evaluate(&refs, beta, rng, false).map(|(parts, _)| parts)
    }

    /// Lower-bound terms and the gradient of `loss` w.r.t. every parameter.
    pub fn loss_and_grad(&self, batch: &[&Trajectory], beta: f64, rng: &mut impl Rng) -> Result<(ElboParts, Grads)> {
        self.evaluate(batch, beta, rng, true)
            .map(|(parts, g)| (parts, g.expect("gradient pass")))
    }

    fn evaluate(
        &self,
        trajs: &[&Trajectory],
        beta: f64,
        rng: &mut impl Rng,
        with_grad: bool,
    ) -> Result<(ElboParts, Option<Grads>)> {
        let c = &self.config;
        let p = &self.params;
        let sb = c.batch(trajs)?;
        let (bsz, n, da) = (sb.batch, c.n_agents, c.d_alpha);
        let pairs = bsz * n;
        let noise: Vec<TrajNoise> = (0..bsz).map(|_| TrajNoise::draw(c, true, rng)).collect();
        let mut grads = with_grad.then(|| p.zeros_like());
        let kl_coef = beta / bsz as f64;
        let recon_coef = -1.0 / bsz as f64;

        let (joint_out, joint_cache) = self.joint_encoder.forward(p, sb.joint_x.clone(), sb.steps, bsz);
        let jp = joint_pass(c, &self.joint_prior, p, joint_out, &noise, kl_coef, grads.as_mut());

        let (local_out, local_cache) = self.local_encoder.forward(p, sb.local_inputs(), sb.steps, pairs);
        let mut prior_x = Tensor::zeros((pairs, c.d_omega + n));
        for b in 0..bsz {
            for i in 0..n {
                let r = b * n + i;
                prior_x.slice_mut(s![r, ..c.d_omega]).assign(&jp.z_omega.row(b));
                prior_x[[r, c.d_omega + i]] = 1.0;
            }
        }
        let (prior_out, prior_cache) = self.local_prior.forward(p, prior_x);

        let mut z_alpha = Tensor::zeros((pairs, da));
        let mut kl_local = 0.0;
        for b in 0..bsz {
            for i in 0..n {
                let r = b * n + i;
                let (mq, sq) = gaussian_row(local_out.row(r).as_slice().unwrap());
                let (mp, sp) = gaussian_row(prior_out.row(r).as_slice().unwrap());
                let z = reparam(&mq, &sq, &noise[b].local[i]);
                z_alpha.row_mut(r).assign(&ndarray::ArrayView1::from(&z));
                kl_local += gaussian_kl_slices(&mq, &sq, &mp, &sp);
            }
        }

        let policy_x = sb.policy_inputs(z_alpha.view());
        let (policy_out, policy_cache) = self.policy.forward(p, policy_x);
        let (recon, d_policy) = policy_log_likelihood(
            &policy_out,
            &sb.actions,
            &c.action_dims,
            bsz,
            with_grad.then_some(recon_coef),
        );
        let parts = ElboParts::from_sums(recon.iter().sum(), Some(kl_local), jp.kl_sum, bsz, beta);

        let Some(mut g) = grads else {
            return Ok((parts, None));
        };
        let dx = self
            .policy
            .backward(p, &mut g, &policy_cache, d_policy.expect("gradient pass"), true)
            .expect("requested dx");
        let dz_alpha = policy_dz(&dx, c.state_dim, da, sb.steps, pairs);

        let mut d_local = Tensor::zeros(local_out.raw_dim());
        let mut d_prior = Tensor::zeros(prior_out.raw_dim());
        for b in 0..bsz {
            for i in 0..n {
                let r = b * n + i;
                let (mq, sq) = gaussian_row(local_out.row(r).as_slice().unwrap());
                let (mp, sp) = gaussian_row(prior_out.row(r).as_slice().unwrap());
                let mut dl = d_local.row_mut(r);
                let dl = dl.as_slice_mut().unwrap();
                let (dmq, dsq) = dl.split_at_mut(da);
                let mut dp = d_prior.row_mut(r);
                let dp = dp.as_slice_mut().unwrap();
                let (dmp, dsp) = dp.split_at_mut(da);
                gaussian_kl_grad(&mq, &sq, &mp, &sp, kl_coef, dmq, dsq, dmp, dsp);
                for j in 0..da {
                    let dz = dz_alpha[[r, j]];
                    dmq[j] += dz;
                    dsq[j] += dz * sq[j].exp() * noise[b].local[i][j];
                    dsq[j] *= clamp_mask(local_out[[r, da + j]]);
                    dsp[j] *= clamp_mask(prior_out[[r, da + j]]);
                }
            }
        }
        let d_prior_x = self
            .local_prior
            .backward(p, &mut g, &prior_cache, d_prior, true)
            .expect("requested dx");
        let mut dz_omega = Tensor::zeros((bsz, c.d_omega));
        for b in 0..bsz {
            for i in 0..n {
                dz_omega
                    .row_mut(b)
                    .scaled_add(1.0, &d_prior_x.slice(s![b * n + i, ..c.d_omega]));
            }
        }
        self.local_encoder.backward(p, &mut g, &local_cache, d_local);
        let d_joint = jp.finish(c, &noise, &dz_omega);
        self.joint_encoder.backward(p, &mut g, &joint_cache, d_joint);
        Ok((parts, Some(g)))
    }

    /// Deterministic embeddings: the posterior mixture mean of `z_omega`
    /// (`B x D_omega`) and every agent's local posterior mean
    /// (`B*N x D_alpha`, row `b * N + i`).
    pub fn posterior_means(&self, trajs: &[&Trajectory]) -> Result<(Tensor, Tensor)> {
        let c = &self.config;
        let sb = c.batch(trajs)?;
        let lay = c.mixture();
        let joint = self.joint_encoder.predict(&self.params, sb.joint_x.clone(), sb.steps, sb.batch);
        let mut z_omega = Tensor::zeros((sb.batch, c.d_omega));
        for b in 0..sb.batch {
            let mean = lay.params(joint.row(b).as_slice().unwrap()).expected_value();
            z_omega.row_mut(b).assign(&ndarray::ArrayView1::from(&mean));
        }
        let local = self
            .local_encoder
            .predict(&self.params, sb.local_inputs(), sb.steps, sb.batch * c.n_agents);
        let z_alpha = local.slice(s![.., ..c.d_alpha]).to_owned();
        Ok((z_omega, z_alpha))
    }

    /// Per-trajectory summed squared error of the policy means, with
    /// latents set to the local posterior means.
    pub fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        let c = &self.config;
        let sb = c.batch(trajs)?;
        let (_, z_alpha) = self.posterior_means(trajs)?;
        let out = self.policy.predict(&self.params, sb.policy_inputs(z_alpha.view()).view());
        Ok(policy_sq_error(&out, &sb.actions, &c.action_dims, sb.batch))
    }

    /// Draws one latent sample per the generative order of [`Self::elbo`].
    pub fn sample_latents(&self, traj: &Trajectory, rng: &mut impl Rng) -> Result<LatentSample> {
        let z_omega = super::sample_gmm(&self.encode_joint(traj)?, rng);
        let z_alpha = self
            .encode_local_all(traj)?
            .iter()
            .map(|q| super::sample_gaussian(q, rng))
            .collect();
        Ok(LatentSample { z_omega, z_alpha })
    }

    pub fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        self.config.check_meta(meta)
    }
}

fn gaussian_params(row: &[f64]) -> DiagGaussianParams {
    let (mean, log_std) = gaussian_row(row);
    DiagGaussianParams { mean, log_std }
}

/// Policy head row `[mean (A) | raw log-std (A)]` truncated to the agent's
/// own action width.
pub(crate) fn policy_params(row: &[f64], action_dim: usize) -> DiagGaussianParams {
    let a = row.len() / 2;
    DiagGaussianParams {
        mean: row[..action_dim].to_vec(),
        log_std: row[a..a + action_dim].iter().map(|&v| clamp_log_std(v)).collect(),
    }
}

use ndarray::{s, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpointable, ModelKind};
use crate::hvae::blocks::{policy_dz, policy_inputs, policy_log_likelihood, policy_sq_error, MixturePrior, SeqBatch, SeqEncoder};
use crate::hvae::{joint_pass, policy_params, DiagGaussianParams, ElboParts, GMMParams, ModelConfig, TrajNoise};
use crate::nn::{Grads, Mlp, ParamStore, Tensor};
use crate::trajdata::{DatasetMeta, Trajectory};
use crate::training::{LossParts, Trainable};
use crate::{rng, Error, Result};

/// Single-level VAE: the joint encoder and mixture prior of the
/// hierarchical model, with a policy conditioned on `z_omega` itself. The
/// config's `d_alpha` is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatVae {
    pub config: ModelConfig,
    pub params: ParamStore,
    joint_encoder: SeqEncoder,
    joint_prior: MixturePrior,
    policy: Mlp,
}

impl FlatVae {
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
        let joint_prior = MixturePrior::new(&mut params, "joint_prior", c.gmm_components, c.d_omega, &mut r);
        let policy = Mlp::new(
            &mut params,
            "policy",
            &[s + c.d_omega + n, c.policy_hidden, c.policy_hidden, 2 * a],
            &mut r,
        );
        Ok(Self {
            config,
            params,
            joint_encoder,
            joint_prior,
            policy,
        })
    }

    fn batch(&self, trajs: &[&Trajectory]) -> Result<SeqBatch> {
        let c = &self.config;
        SeqBatch::new(trajs, c.n_agents, c.state_dim, &c.action_dims)
    }

    pub fn joint_prior(&self) -> GMMParams {
        self.joint_prior.params(&self.params)
    }

    pub fn encode_joint(&self, traj: &Trajectory) -> Result<GMMParams> {
        let b = self.batch(&[traj])?;
        let out = self.joint_encoder.predict(&self.params, b.joint_x, b.steps, 1);
        Ok(self.config.mixture().params(out.row(0).as_slice().expect("contiguous row")))
    }

    pub fn policy(&self, state: &[f64], z_omega: &[f64], agent: usize) -> Result<DiagGaussianParams> {
        let c = &self.config;
        if agent >= c.n_agents {
            return Err(Error::InvalidArgument(format!("agent index {agent} out of range")));
        }
        if state.len() != c.state_dim || z_omega.len() != c.d_omega {
            return Err(Error::DimMismatch(format!(
                "policy expects state dim {} and z_omega dim {}, got {} and {}",
                c.state_dim,
                c.d_omega,
                state.len(),
                z_omega.len()
            )));
        }
        let states = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row shape");
        let mut z = Tensor::zeros((c.n_agents, c.d_omega));
        z.row_mut(agent).assign(&ndarray::ArrayView1::from(z_omega));
        let x = policy_inputs(&states, z.view(), 1, 1, c.n_agents);
        let out = self.policy.predict(&self.params, x.slice(s![agent..agent + 1, ..]));
        Ok(policy_params(out.row(0).as_slice().unwrap(), c.action_dims[agent]))
    }

    pub fn policy_log_prob(&self, state: &[f64], action: &[f64], z_omega: &[f64], agent: usize) -> Result<f64> {
        let dist = self.policy(state, z_omega, agent)?;
        if action.len() != dist.dim() {
            return Err(Error::DimMismatch(format!("agent {agent} acts in {} dims", dist.dim())));
        }
        Ok(dist.log_prob(action))
    }

    /// Lower-bound terms; noise is drawn per trajectory as `z_omega`, then
    /// the joint KL samples.
    pub fn elbo(&self, batch: &[Trajectory], beta: f64, rng: &mut impl Rng) -> Result<ElboParts> {
        let refs: Vec<&Trajectory> = batch.iter().collect();
        self.evaluate(&refs, beta, rng, false).map(|(p, _)| p)
    }

    pub fn loss_and_grad(&self, batch: &[&Trajectory], beta: f64, rng: &mut impl Rng) -> Result<(ElboParts, Grads)> {
        self.evaluate(batch, beta, rng, true)
            .map(|(p, g)| (p, g.expect("gradient pass")))
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
        let sb = self.batch(trajs)?;
        let (bsz, n) = (sb.batch, c.n_agents);
        let noise: Vec<TrajNoise> = (0..bsz).map(|_| TrajNoise::draw(c, false, rng)).collect();
        let mut grads = with_grad.then(|| p.zeros_like());
        let (joint_out, joint_cache) = self.joint_encoder.forward(p, sb.joint_x.clone(), sb.steps, bsz);
        let jp = joint_pass(c, &self.joint_prior, p, joint_out, &noise, beta / bsz as f64, grads.as_mut());
        let z = repeat_rows(&jp.z_omega, n);
        let (out, cache) = self.policy.forward(p, sb.policy_inputs(z.view()));
        let (recon, d_out) = policy_log_likelihood(
            &out,
            &sb.actions,
            &c.action_dims,
            bsz,
            with_grad.then_some(-1.0 / bsz as f64),
        );
        let parts = ElboParts::from_sums(recon.iter().sum(), None, jp.kl_sum, bsz, beta);
        let Some(mut g) = grads else {
            return Ok((parts, None));
        };
        let dx = self
            .policy
            .backward(p, &mut g, &cache, d_out.expect("gradient pass"), true)
            .expect("requested dx");
        let dz_pairs = policy_dz(&dx, c.state_dim, c.d_omega, sb.steps, bsz * n);
        let mut dz = Tensor::zeros((bsz, c.d_omega));
        for b in 0..bsz {
            for i in 0..n {
                dz.row_mut(b).scaled_add(1.0, &dz_pairs.row(b * n + i));
            }
        }
        let d_joint = jp.finish(c, &noise, &dz);
        self.joint_encoder.backward(p, &mut g, &joint_cache, d_joint);
        Ok((parts, Some(g)))
    }

    /// Posterior mixture means of `z_omega`, one row per trajectory.
    pub fn posterior_means(&self, trajs: &[&Trajectory]) -> Result<Tensor> {
        let sb = self.batch(trajs)?;
        let joint = self.joint_encoder.predict(&self.params, sb.joint_x.clone(), sb.steps, sb.batch);
        let lay = self.config.mixture();
        let mut z = Tensor::zeros((sb.batch, self.config.d_omega));
        for b in 0..sb.batch {
            let mean = lay.params(joint.row(b).as_slice().unwrap()).expected_value();
            z.row_mut(b).assign(&ndarray::ArrayView1::from(&mean));
        }
        Ok(z)
    }

    pub fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        let sb = self.batch(trajs)?;
        let z = repeat_rows(&self.posterior_means(trajs)?, self.config.n_agents);
        let out = self.policy.predict(&self.params, sb.policy_inputs(z.view()).view());
        Ok(policy_sq_error(&out, &sb.actions, &self.config.action_dims, sb.batch))
    }
}

fn repeat_rows(x: &Tensor, times: usize) -> Tensor {
    let mut out = Tensor::zeros((x.nrows() * times, x.ncols()));
    for (r, row) in x.rows().into_iter().enumerate() {
        for k in 0..times {
            out.row_mut(r * times + k).assign(&row);
        }
    }
    out
}

impl Trainable for FlatVae {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        self.config.check_meta(meta)
    }

    fn loss_and_grad(&self, batch: &[&Trajectory], beta: f64, rng: &mut ChaCha8Rng) -> Result<(LossParts, Grads)> {
        FlatVae::loss_and_grad(self, batch, beta, rng).map(|(p, g)| (p.into(), g))
    }
}

impl Checkpointable for FlatVae {
    type Config = ModelConfig;
    const KIND: ModelKind = ModelKind::FlatVae;

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn build(config: ModelConfig) -> Result<Self> {
        Self::new(config, 0)
    }
}

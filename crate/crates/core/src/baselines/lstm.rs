use ndarray::s;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpointable, ModelKind};
use crate::hvae::blocks::meta_for;
use crate::nn::{Grads, Lstm, Mlp, ParamStore, Tensor};
use crate::trajdata::{DatasetMeta, Trajectory};
use crate::training::{LossParts, Trainable};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmHyperparams {
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for LstmHyperparams {
    fn default() -> Self {
        Self {
            hidden: 64,
            head_hidden: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub head_hidden: usize,
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_dims: Vec<usize>,
}

impl LstmConfig {
    pub fn new(hp: &LstmHyperparams, meta: &DatasetMeta) -> Self {
        Self {
            hidden: hp.hidden,
            head_hidden: hp.head_hidden,
            n_agents: meta.n_agents,
            state_dim: meta.state_dim,
            action_dims: meta.action_dims.clone(),
        }
    }

    fn joint_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }
}

/// Causal next-joint-action predictor. Step `t` reads `[s_t | a_{t-1}]`
/// (zeros for `t = 0`) and predicts `a_t`. The embedding is the hidden
/// state after one extra step that reads `[s_T | a_{T-1}]`, so it depends on
/// the whole trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmBaseline {
    pub config: LstmConfig,
    pub params: ParamStore,
    rnn: Lstm,
    head: Mlp,
}

struct Inputs {
    steps: usize,
    batch: usize,
    /// `(T + 1) * B` rows, time-major.
    x: Tensor,
    /// `T * B` rows of joint actions.
    targets: Tensor,
}

impl LstmBaseline {
    pub fn new(config: LstmConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.head_hidden == 0 || config.n_agents == 0 || config.state_dim == 0 {
            return Err(Error::Config("lstm sizes must be >= 1".into()));
        }
        if config.action_dims.len() != config.n_agents || config.action_dims.contains(&0) {
            return Err(Error::Config("lstm.action_dims must list one positive size per agent".into()));
        }
        let mut r = rng::seeded(seed);
        let mut params = ParamStore::new();
        let j = config.joint_action_dim();
        let rnn = Lstm::new(&mut params, "lstm", config.state_dim + j, config.hidden, &mut r);
        let head = Mlp::new(&mut params, "head", &[config.hidden, config.head_hidden, j], &mut r);
        Ok(Self { config, params, rnn, head })
    }

    fn inputs(&self, trajs: &[&Trajectory]) -> Result<Inputs> {
        let c = &self.config;
        let first = trajs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let steps = first.actions.len();
        for (index, traj) in trajs.iter().enumerate() {
            if traj.actions.len() != steps {
                return Err(Error::DimMismatch("batch mixes episode lengths".into()));
            }
            traj.conformance(&meta_for(c.n_agents, c.state_dim, &c.action_dims, traj))
                .map_err(|reason| Error::Shape { index, reason })?;
        }
        let (batch, sd, j) = (trajs.len(), c.state_dim, c.joint_action_dim());
        let mut x = Tensor::zeros(((steps + 1) * batch, sd + j));
        let mut targets = Tensor::zeros((steps * batch, j));
        for (b, traj) in trajs.iter().enumerate() {
            for t in 0..=steps {
                let row = t * batch + b;
                for (k, &v) in traj.states[t].iter().enumerate() {
                    x[[row, k]] = v;
                }
                if t > 0 {
                    let flat = traj.actions[t - 1].iter().flatten();
                    for (k, &v) in flat.enumerate() {
                        x[[row, sd + k]] = v;
                    }
                }
                if t < steps {
                    for (k, &v) in traj.actions[t].iter().flatten().enumerate() {
                        targets[[row, k]] = v;
                    }
                }
            }
        }
        Ok(Inputs { steps, batch, x, targets })
    }

    /// Predicted joint actions, `T * B` rows (row `t * B + b`).
    pub fn predict(&self, trajs: &[&Trajectory]) -> Result<Tensor> {
        let inp = self.inputs(trajs)?;
        let cache = self.rnn.forward(&self.params, inp.x, inp.steps + 1, inp.batch);
        let h = cache.outputs().slice(s![..inp.steps * inp.batch, ..]).to_owned();
        Ok(self.head.predict(&self.params, h.view()))
    }

    /// Final hidden states, one row per trajectory.
    pub fn embed_batch(&self, trajs: &[&Trajectory]) -> Result<Tensor> {
        let inp = self.inputs(trajs)?;
        let cache = self.rnn.forward(&self.params, inp.x, inp.steps + 1, inp.batch);
        Ok(cache.final_hidden().to_owned())
    }

    pub fn embed(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[traj])?.row(0).to_vec())
    }

    pub fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        let inp = self.inputs(trajs)?;
        let pred = self.predict(trajs)?;
        let mut out = vec![0.0; inp.batch];
        for (r, (p, a)) in pred.rows().into_iter().zip(inp.targets.rows()).enumerate() {
            out[r % inp.batch] += p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(out)
    }

    /// Batch mean of the per-trajectory summed squared error, with gradient.
    pub fn loss_and_grad(&self, trajs: &[&Trajectory]) -> Result<(f64, Grads)> {
        let p = &self.params;
        let inp = self.inputs(trajs)?;
        let (steps, batch) = (inp.steps, inp.batch);
        let cache = self.rnn.forward(p, inp.x, steps + 1, batch);
        let h = cache.outputs().slice(s![..steps * batch, ..]).to_owned();
        let (pred, head_cache) = self.head.forward(p, h);
        let diff = &pred - &inp.targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / batch as f64;
        let mut g = p.zeros_like();
        let d_pred = diff * (2.0 / batch as f64);
        let dh = self.head.backward(p, &mut g, &head_cache, d_pred, true).expect("requested dx");
        let mut dh_all = Tensor::zeros(((steps + 1) * batch, self.config.hidden));
        dh_all.slice_mut(s![..steps * batch, ..]).assign(&dh);
        self.rnn.backward(p, &mut g, &cache, dh_all.view(), false);
        Ok((loss, g))
    }
}

impl Trainable for LstmBaseline {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        let c = &self.config;
        if meta.n_agents != c.n_agents || meta.state_dim != c.state_dim || meta.action_dims != c.action_dims {
            return Err(Error::DimMismatch("dataset shapes differ from the lstm config".into()));
        }
        Ok(())
    }

    fn loss_and_grad(&self, batch: &[&Trajectory], _beta: f64, _rng: &mut ChaCha8Rng) -> Result<(LossParts, Grads)> {
        let (loss, g) = LstmBaseline::loss_and_grad(self, batch)?;
        Ok((
            LossParts {
                loss,
                recon: None,
                kl_local: None,
                kl_joint: None,
            },
            g,
        ))
    }

    fn uses_beta(&self) -> bool {
        false
    }
}

impl Checkpointable for LstmBaseline {
    type Config = LstmConfig;
    const KIND: ModelKind = ModelKind::Lstm;

    fn config(&self) -> &LstmConfig {
        &self.config
    }

    fn build(config: LstmConfig) -> Result<Self> {
        Self::new(config, 0)
    }
}

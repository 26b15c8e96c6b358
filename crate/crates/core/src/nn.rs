//! Minimal float64 layers with hand-written backward passes.
//!
//! Parameters live in a [`ParamStore`]; layers only hold [`ParamId`]s into
//! it. Forward passes return caches that the matching backward pass consumes,
//! accumulating into a [`Grads`] buffer with the same layout as the store.
//! Batches are row-major: one row per example. Sequences are time-major
//! blocks, row `t * batch + b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads {
            tensors: self.values.iter().map(|v| Tensor::zeros(v.raw_dim())).collect(),
        }
    }

    /// All parameters concatenated in store order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars());
        let mut off = 0;
        for v in &mut self.values {
            for (dst, src) in v.iter_mut().zip(&flat[off..]) {
                *dst = *src;
            }
            off += v.len();
        }
    }
}

/// Gradient buffer parallel to a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    tensors: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|g| g * factor);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|g| g.is_finite()))
    }
}

/// Fan-in scaled uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), init_uniform(fan_in, fan_out, fan_in, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros((1, fan_out)));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, p: &ParamStore, x: ArrayView2<f64>) -> Tensor {
        let mut y = x.dot(p.get(self.w));
        y += &p.get(self.b).row(0);
        y
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Grads,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        need_dx: bool,
    ) -> Option<Tensor> {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, g.get_mut(self.w));
        let mut gb = g.get_mut(self.b).row_mut(0);
        gb += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&p.get(self.w).t()))
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpCache {
    /// Input of every layer; entries past the first are post-ReLU.
    inputs: Vec<Tensor>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Linear::new(store, &format!("{name}.{l}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn forward(&self, p: &ParamStore, x: Tensor) -> (Tensor, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(p, h.view());
            if l + 1 < self.layers.len() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpCache { inputs })
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, p: &ParamStore, x: ArrayView2<f64>) -> Tensor {
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, h.view());
            if l + 1 < self.layers.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Grads,
        cache: &MlpCache,
        dy: Tensor,
        need_dx: bool,
    ) -> Option<Tensor> {
        let mut d = dy;
        for l in (0..self.layers.len()).rev() {
            let x = &cache.inputs[l];
            let want = l > 0 || need_dx;
            let dx = self.layers[l].backward(p, g, x.view(), d.view(), want);
            match dx {
                Some(mut dx) if l > 0 => {
                    ndarray::Zip::from(&mut dx).and(x).for_each(|dv, &xv| {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    });
                    d = dx;
                }
                other => return other,
            }
        }
        unreachable!("mlp has at least one layer")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-direction LSTM with gate layout `[input | forget | cell | output]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

pub struct LstmCache {
    steps: usize,
    batch: usize,
    x: Tensor,
    /// Activated gates, `steps * batch x 4H`.
    gates: Tensor,
    /// Cell states including the zero initial block, `(steps + 1) * batch x H`.
    c: Tensor,
    /// Hidden states including the zero initial block.
    h: Tensor,
    tanh_c: Tensor,
}

impl LstmCache {
    /// Hidden state after step `t` (0-based), `batch x H`.
    pub fn hidden_at(&self, t: usize) -> ArrayView2<'_, f64> {
        self.h.slice(s![(t + 1) * self.batch..(t + 2) * self.batch, ..])
    }

    pub fn final_hidden(&self) -> ArrayView2<'_, f64> {
        self.hidden_at(self.steps - 1)
    }

    /// All step outputs, `steps * batch x H`.
    pub fn outputs(&self) -> ArrayView2<'_, f64> {
        self.h.slice(s![self.batch.., ..])
    }
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input + hidden;
        let w_x = store.add(format!("{name}.w_x"), init_uniform(input, 4 * hidden, fan_in, rng));
        let w_h = store.add(format!("{name}.w_h"), init_uniform(hidden, 4 * hidden, fan_in, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros((1, 4 * hidden)));
        Self { w_x, w_h, b, input, hidden }
    }

    pub fn forward(&self, p: &ParamStore, x: Tensor, steps: usize, batch: usize) -> LstmCache {
        assert_eq!(x.nrows(), steps * batch);
        let hd = self.hidden;
        let mut gates = x.dot(p.get(self.w_x));
        gates += &p.get(self.b).row(0);
        let w_h = p.get(self.w_h);
        let mut c = Tensor::zeros(((steps + 1) * batch, hd));
        let mut h = Tensor::zeros(((steps + 1) * batch, hd));
        let mut tanh_c = Tensor::zeros((steps * batch, hd));
        for t in 0..steps {
            let rows = t * batch..(t + 1) * batch;
            {
                let h_prev = h.slice(s![rows.clone(), ..]);
                let mut z = gates.slice_mut(s![rows.clone(), ..]);
                general_mat_mul(1.0, &h_prev, w_h, 1.0, &mut z);
            }
            let z = &mut gates.as_slice_mut().expect("standard layout")[rows.start * 4 * hd..rows.end * 4 * hd];
            let (c_prev, c_next) = c.as_slice_mut().expect("standard layout").split_at_mut(rows.end * hd);
            let c_prev = &c_prev[rows.start * hd..];
            let c_next = &mut c_next[..batch * hd];
            let h_next = &mut h.as_slice_mut().expect("standard layout")[rows.end * hd..(rows.end + batch) * hd];
            let tc_out = &mut tanh_c.as_slice_mut().expect("standard layout")[rows.start * hd..rows.end * hd];
            for r in 0..batch {
                let z = &mut z[r * 4 * hd..(r + 1) * 4 * hd];
                for v in &mut z[..2 * hd] {
                    *v = sigmoid(*v);
                }
                for v in &mut z[2 * hd..3 * hd] {
                    *v = v.tanh();
                }
                for v in &mut z[3 * hd..] {
                    *v = sigmoid(*v);
                }
                for j in 0..hd {
                    let k = r * hd + j;
                    let cn = z[hd + j] * c_prev[k] + z[j] * z[2 * hd + j];
                    let tc = cn.tanh();
                    c_next[k] = cn;
                    tc_out[k] = tc;
                    h_next[k] = z[3 * hd + j] * tc;
                }
            }
        }
        LstmCache { steps, batch, x, gates, c, h, tanh_c }
    }

    /// `dh` is the gradient w.r.t. every step output (`steps * batch x H`).
    pub fn backward(
        &self,
        p: &ParamStore,
        g: &mut Grads,
        cache: &LstmCache,
        dh: ArrayView2<f64>,
        need_dx: bool,
    ) -> Option<Tensor> {
        let (steps, batch, hd) = (cache.steps, cache.batch, self.hidden);
        let w_h = p.get(self.w_h);
        let mut dz = Tensor::zeros((steps * batch, 4 * hd));
        let mut dh_next = Tensor::zeros((batch, hd));
        let mut dc_next = Tensor::zeros((batch, hd));
        let gates = cache.gates.as_slice().expect("standard layout");
        let c_all = cache.c.as_slice().expect("standard layout");
        let tanh_c = cache.tanh_c.as_slice().expect("standard layout");
        for t in (0..steps).rev() {
            {
                let dz_t = &mut dz.as_slice_mut().expect("standard layout")[t * batch * 4 * hd..(t + 1) * batch * 4 * hd];
                let dhn = dh_next.as_slice().expect("standard layout");
                let dcn = dc_next.as_slice_mut().expect("standard layout");
                for r in 0..batch {
                    let row = t * batch + r;
                    let z = &gates[row * 4 * hd..(row + 1) * 4 * hd];
                    let dzr = &mut dz_t[r * 4 * hd..(r + 1) * 4 * hd];
                    let dh_row = dh.row(row);
                    for j in 0..hd {
                        let (ig, fg, gg, og) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
                        let k = r * hd + j;
                        let tc = tanh_c[row * hd + j];
                        let dhv = dh_row[j] + dhn[k];
                        let d_o = dhv * tc;
                        let dc = dcn[k] + dhv * og * (1.0 - tc * tc);
                        dcn[k] = dc * fg;
                        dzr[j] = dc * gg * ig * (1.0 - ig);
                        dzr[hd + j] = dc * c_all[row * hd + j] * fg * (1.0 - fg);
                        dzr[2 * hd + j] = dc * ig * (1.0 - gg * gg);
                        dzr[3 * hd + j] = d_o * og * (1.0 - og);
                    }
                }
            }
            let dzt = dz.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &dzt, &w_h.t(), 0.0, &mut dh_next);
        }
        let h_prev = cache.h.slice(s![..steps * batch, ..]);
        general_mat_mul(1.0, &h_prev.t(), &dz, 1.0, g.get_mut(self.w_h));
        general_mat_mul(1.0, &cache.x.t(), &dz, 1.0, g.get_mut(self.w_x));
        let mut gb = g.get_mut(self.b).row_mut(0);
        gb += &dz.sum_axis(Axis(0));
        need_dx.then(|| dz.dot(&p.get(self.w_x).t()))
    }
}

/// Reverses the order of the `steps` time blocks of a time-major matrix.
pub fn reverse_time(x: ArrayView2<f64>, steps: usize, batch: usize) -> Tensor {
    let mut out = Tensor::zeros(x.raw_dim());
    for t in 0..steps {
        out.slice_mut(s![t * batch..(t + 1) * batch, ..])
            .assign(&x.slice(s![(steps - 1 - t) * batch..(steps - t) * batch, ..]));
    }
    out
}

/// Bidirectional LSTM summarizing a sequence by the concatenated final
/// states of both directions, `[h_fwd(T-1) | h_bwd(0)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fwd = Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng);
        let bwd = Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward(&self, p: &ParamStore, x: Tensor, steps: usize, batch: usize) -> (Tensor, BiLstmCache) {
        let x_rev = reverse_time(x.view(), steps, batch);
        let fwd = self.fwd.forward(p, x, steps, batch);
        let bwd = self.bwd.forward(p, x_rev, steps, batch);
        let hd = self.fwd.hidden;
        let mut summary = Tensor::zeros((batch, 2 * hd));
        summary.slice_mut(s![.., ..hd]).assign(&fwd.final_hidden());
        summary.slice_mut(s![.., hd..]).assign(&bwd.final_hidden());
        (summary, BiLstmCache { fwd, bwd })
    }

    /// Backpropagates a gradient on the summary. Input gradients are not
    /// needed by any caller, so none are returned.
    pub fn backward(&self, p: &ParamStore, g: &mut Grads, cache: &BiLstmCache, dsummary: ArrayView2<f64>) {
        let (steps, batch, hd) = (cache.fwd.steps, cache.fwd.batch, self.fwd.hidden);
        let mut dh = Tensor::zeros((steps * batch, hd));
        let last = s![(steps - 1) * batch.., ..];
        dh.slice_mut(last).assign(&dsummary.slice(s![.., ..hd]));
        self.fwd.backward(p, g, &cache.fwd, dh.view(), false);
        dh.slice_mut(last).assign(&dsummary.slice(s![.., hd..]));
        self.bwd.backward(p, g, &cache.bwd, dh.view(), false);
    }
}

/// Adam moments for every tensor of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = |s: &ParamStore| s.tensors().iter().map(|t| Tensor::zeros(t.raw_dim())).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}

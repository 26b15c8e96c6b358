//! Post-hoc analysis: embeddings, action-prediction loss, clustering,
//! intra-cluster trajectory distance, PCA, class labels and run tracking.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{FlatVae, LstmBaseline};
use crate::behaviorgen::{parse_run_id, run_prefix};
use crate::envs::{agent_dispersion, final_positions, trajectory_return};
use crate::hvae::MohbaModel;
use crate::nn::Tensor;
use crate::trajdata::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::{rng, Error, Result};

const CHUNK: usize = 64;

/// Anything that maps trajectories to deterministic embeddings and
/// predicted actions.
pub trait Embedder {
    fn check_meta(&self, meta: &DatasetMeta) -> Result<()>;
    /// `(z_omega, z_alpha)` for a chunk; `z_alpha` rows are `b * N + i`.
    fn embed_chunk(&self, trajs: &[&Trajectory]) -> Result<(Tensor, Option<Tensor>)>;
    /// Summed squared action error per trajectory.
    fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>>;
}

impl Embedder for MohbaModel {
    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        MohbaModel::check_meta(self, meta)
    }

    fn embed_chunk(&self, trajs: &[&Trajectory]) -> Result<(Tensor, Option<Tensor>)> {
        self.posterior_means(trajs).map(|(w, a)| (w, Some(a)))
    }

    fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        MohbaModel::action_sq_errors(self, trajs)
    }
}

impl Embedder for FlatVae {
    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        self.config.check_meta(meta)
    }

    fn embed_chunk(&self, trajs: &[&Trajectory]) -> Result<(Tensor, Option<Tensor>)> {
        self.posterior_means(trajs).map(|w| (w, None))
    }

    fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        FlatVae::action_sq_errors(self, trajs)
    }
}

impl Embedder for LstmBaseline {
    fn check_meta(&self, meta: &DatasetMeta) -> Result<()> {
        crate::training::Trainable::check_meta(self, meta)
    }

    fn embed_chunk(&self, trajs: &[&Trajectory]) -> Result<(Tensor, Option<Tensor>)> {
        self.embed_batch(trajs).map(|w| (w, None))
    }

    fn action_sq_errors(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        LstmBaseline::action_sq_errors(self, trajs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub traj_ids: Vec<usize>,
    /// `K x D_omega`.
    pub z_omega: Tensor,
    /// `K x (N * D_alpha)`, agent-major within a row.
    pub z_alpha: Option<Tensor>,
    pub n_agents: usize,
    pub provenance: String,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.traj_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj_ids.is_empty()
    }

    /// `K x D_alpha` local embeddings of one agent.
    pub fn agent(&self, agent: usize) -> Option<Tensor> {
        let za = self.z_alpha.as_ref()?;
        let d = za.ncols() / self.n_agents;
        (agent < self.n_agents).then(|| za.slice(s![.., agent * d..(agent + 1) * d]).to_owned())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("traj_id");
        for j in 0..self.z_omega.ncols() {
            let _ = write!(out, ",z_omega_{j}");
        }
        if let Some(za) = &self.z_alpha {
            let d = za.ncols() / self.n_agents;
            for i in 0..self.n_agents {
                for j in 0..d {
                    let _ = write!(out, ",z_alpha_{i}_{j}");
                }
            }
        }
        out.push('\n');
        for (r, id) in self.traj_ids.iter().enumerate() {
            let _ = write!(out, "{id}");
            for v in self.z_omega.row(r) {
                let _ = write!(out, ",{v}");
            }
            if let Some(za) = &self.z_alpha {
                for v in za.row(r) {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`Self::write_csv`]; provenance is left empty.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty file".into() })?
            .split(',')
            .collect();
        let d_omega = header.iter().filter(|h| h.starts_with("z_omega_")).count();
        let alpha: Vec<&str> = header.iter().copied().filter(|h| h.starts_with("z_alpha_")).collect();
        let n_agents = alpha
            .iter()
            .filter_map(|h| h.split('_').nth(2)?.parse::<usize>().ok())
            .max()
            .map_or(1, |m| m + 1);
        let width = 1 + d_omega + alpha.len();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (k, line) in lines.enumerate() {
            let bad = |message: String| Error::Parse { line: k + 2, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(bad(format!("expected {width} fields, found {}", fields.len())));
            }
            ids.push(fields[0].parse().map_err(|e| bad(format!("traj_id: {e}")))?);
            for f in &fields[1..] {
                values.push(f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}")))?);
            }
        }
        let all = Tensor::from_shape_vec((ids.len(), width - 1), values).expect("checked widths");
        Ok(Self {
            traj_ids: ids,
            z_omega: all.slice(s![.., ..d_omega]).to_owned(),
            z_alpha: (!alpha.is_empty()).then(|| all.slice(s![.., d_omega..]).to_owned()),
            n_agents,
            provenance: String::new(),
        })
    }
}

/// Posterior-mean embeddings of every trajectory, in dataset order.
pub fn embed_dataset(model: &dyn Embedder, dataset: &TrajectoryDataset, provenance: &str) -> Result<EmbeddingTable> {
    model.check_meta(&dataset.meta)?;
    let refs: Vec<&Trajectory> = dataset.trajectories.iter().collect();
    let mut omega = Vec::new();
    let mut alpha = Vec::new();
    for chunk in refs.chunks(CHUNK) {
        let (w, a) = model.embed_chunk(chunk)?;
        omega.push(w);
        if let Some(a) = a {
            let n = dataset.meta.n_agents;
            let d = a.ncols();
            let reshaped = a.into_shape_with_order((chunk.len(), n * d)).expect("b * N rows");
            alpha.push(reshaped);
        }
    }
    let stack = |parts: &[Tensor]| {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    Ok(EmbeddingTable {
        traj_ids: (0..dataset.len()).collect(),
        z_omega: stack(&omega),
        z_alpha: (!alpha.is_empty()).then(|| stack(&alpha)),
        n_agents: dataset.meta.n_agents,
        provenance: provenance.to_string(),
    })
}

/// Embeddings from one posterior sample per trajectory instead of the
/// posterior means. Trajectory `k` draws from stream `k` of `seed`.
pub fn embed_dataset_sampled(
    model: &MohbaModel,
    dataset: &TrajectoryDataset,
    seed: u64,
    provenance: &str,
) -> Result<EmbeddingTable> {
    model.check_meta(&dataset.meta)?;
    let c = &model.config;
    let k = dataset.len();
    let mut z_omega = Tensor::zeros((k, c.d_omega));
    let mut z_alpha = Tensor::zeros((k, c.n_agents * c.d_alpha));
    for (row, traj) in dataset.trajectories.iter().enumerate() {
        let sample = model.sample_latents(traj, &mut rng::stream(seed, row as u64))?;
        z_omega.row_mut(row).assign(&ndarray::ArrayView1::from(&sample.z_omega));
        let flat: Vec<f64> = sample.z_alpha.concat();
        z_alpha.row_mut(row).assign(&ndarray::ArrayView1::from(&flat));
    }
    Ok(EmbeddingTable {
        traj_ids: (0..k).collect(),
        z_omega,
        z_alpha: Some(z_alpha),
        n_agents: c.n_agents,
        provenance: provenance.to_string(),
    })
}

/// Action-prediction loss: squared L2 error summed over steps and agents,
/// averaged over trajectories.
pub fn apl(model: &dyn Embedder, dataset: &TrajectoryDataset) -> Result<f64> {
    model.check_meta(&dataset.meta)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let refs: Vec<&Trajectory> = dataset.trajectories.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(CHUNK) {
        total += model.action_sq_errors(chunk)?.iter().sum::<f64>();
    }
    Ok(total / dataset.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `C x D`.
    pub centroids: Tensor,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid, lowest index on ties.
pub fn nearest_centroid(point: ndarray::ArrayView1<f64>, centroids: &Tensor) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

fn kmeans_pp(points: &Tensor, k: usize, rng: &mut impl Rng) -> Tensor {
    let n = points.nrows();
    let mut centroids = Tensor::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

fn assign(points: &Tensor, centroids: &Tensor) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .rows()
        .into_iter()
        .map(|p| {
            let c = nearest_centroid(p, centroids);
            inertia += sq_dist(p, centroids.row(c));
            c
        })
        .collect();
    (labels, inertia)
}

/// Lloyd iterations from the given centroids. Returns the final assignment
/// and the inertia after every assignment step.
pub fn lloyd(points: &Tensor, init: Tensor, max_iter: usize) -> (ClusterAssignment, Vec<f64>) {
    let mut centroids = init;
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        let mut sums = Tensor::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; centroids.nrows()];
        for (p, &l) in points.rows().into_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &p);
            counts[l] += 1;
        }
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / n as f64));
            }
        }
        let (new_labels, new_inertia) = assign(points, &centroids);
        history.push(new_inertia);
        let done = new_labels == labels;
        labels = new_labels;
        inertia = new_inertia;
        if done {
            break;
        }
    }
    (ClusterAssignment { labels, centroids, inertia }, history)
}

pub const KMEANS_RESTARTS: usize = 10;

/// K-means with k-means++ seeding and 10 restarts; the lowest-inertia run
/// wins, earlier restarts on ties.
pub fn kmeans(points: &Tensor, n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    if n_clusters == 0 || points.nrows() < n_clusters {
        return Err(Error::InvalidArgument(format!(
            "cannot form {n_clusters} clusters from {} points",
            points.nrows()
        )));
    }
    let mut best: Option<ClusterAssignment> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut r = rng::seeded(rng::derive_seed(seed, restart as u64));
        let init = kmeans_pp(points, n_clusters, &mut r);
        let (fit, history) = lloyd(points, init, 300);
        debug_assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0)));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Per-coordinate z-scored flattened `[states | actions]` vectors, scaled by
/// `1 / sqrt(length)`.
pub fn trajectory_vectors(dataset: &TrajectoryDataset) -> Tensor {
    let flat: Vec<Vec<f64>> = dataset
        .trajectories
        .iter()
        .map(|t| {
            t.states
                .iter()
                .flatten()
                .chain(t.actions.iter().flatten().flatten())
                .copied()
                .collect()
        })
        .collect();
    let len = flat.first().map_or(0, Vec::len);
    let mut v = Tensor::from_shape_vec((flat.len(), len), flat.into_iter().flatten().collect())
        .expect("equal-length trajectories");
    let k = v.nrows() as f64;
    let scale = 1.0 / (len.max(1) as f64).sqrt();
    for mut col in v.columns_mut() {
        let mean = col.sum() / k;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k;
        let sd = var.sqrt();
        col.mapv_inplace(|x| if sd > 0.0 { (x - mean) / sd * scale } else { 0.0 });
    }
    v
}

/// Intra-cluster trajectory distance: per cluster, the mean distance of its
/// members' trajectory vectors from the cluster-mean vector; clusters are
/// combined weighted by size. Empty clusters are skipped.
pub fn ictd(dataset: &TrajectoryDataset, labels: &[usize]) -> Result<f64> {
    if labels.len() != dataset.len() {
        return Err(Error::DimMismatch(format!(
            "{} labels for {} trajectories",
            labels.len(),
            dataset.len()
        )));
    }
    let v = trajectory_vectors(dataset);
    let n_clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..n_clusters {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            log::warn!("cluster {c} is empty; skipped");
            continue;
        }
        let sub = v.select(Axis(0), &members);
        let mean = sub.mean_axis(Axis(0)).expect("nonempty");
        total += sub
            .rows()
            .into_iter()
            .map(|r| sq_dist(r, mean.view()).sqrt())
            .sum::<f64>();
        count += members.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `K x 2`.
    pub coords: Tensor,
    /// `2 x D` unit loadings (zero rows when `D < 2`).
    pub components: Tensor,
    /// Covariance eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and eigenvectors as columns.
pub fn symmetric_eigen(a: &Tensor) -> (Vec<f64>, Tensor) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Tensor::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

/// Projects centered points onto the top two principal axes. Each axis is
/// signed so that its first nonzero loading is positive.
pub fn pca_project(points: &Tensor) -> Result<Projection> {
    let (k, d) = points.dim();
    if k < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 points".into()));
    }
    let mean = points.mean_axis(Axis(0)).expect("nonempty");
    let centered = points - &mean;
    let cov = centered.t().dot(&centered) / (k - 1) as f64;
    let (eigenvalues, vectors) = symmetric_eigen(&cov);
    let mut components = Tensor::zeros((2, d));
    for c in 0..d.min(2) {
        let mut col = vectors.column(c).to_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
        components.row_mut(c).assign(&col);
    }
    let coords = centered.dot(&components.t());
    Ok(Projection {
        coords,
        components,
        eigenvalues,
    })
}

/// Equal-size quantile bins over `values`, ordered by value then index.
/// The first `K mod n` classes take one extra member.
pub fn quantile_classes(values: &[f64], n_classes: usize) -> Result<Vec<usize>> {
    if n_classes == 0 || values.is_empty() {
        return Err(Error::InvalidArgument("need at least one value and one class".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let (base, extra) = (values.len() / n_classes, values.len() % n_classes);
    let mut labels = vec![0; values.len()];
    let mut pos = 0;
    for class in 0..n_classes {
        let size = base + usize::from(class < extra);
        for &i in &order[pos..pos + size] {
            labels[i] = class;
        }
        pos += size;
    }
    Ok(labels)
}

pub fn dispersions(dataset: &TrajectoryDataset) -> Vec<f64> {
    dataset
        .trajectories
        .iter()
        .map(|t| agent_dispersion(&final_positions(t, dataset.meta.n_agents)))
        .collect()
}

pub fn dispersion_classes(dataset: &TrajectoryDataset, n_classes: usize) -> Result<Vec<usize>> {
    quantile_classes(&dispersions(dataset), n_classes)
}

pub fn total_returns(dataset: &TrajectoryDataset) -> Result<Vec<f64>> {
    dataset
        .trajectories
        .iter()
        .map(|t| trajectory_return(t).map(|(_, total)| total))
        .collect()
}

pub fn return_classes(dataset: &TrajectoryDataset, n_classes: usize) -> Result<Vec<usize>> {
    quantile_classes(&total_returns(dataset)?, n_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrack {
    pub labels: Vec<usize>,
    pub changepoints: Vec<usize>,
}

/// Nearest-centroid labels of a run's embeddings (rows ordered by training
/// step) and the indices where the label changes.
pub fn track_run(embeddings: &Tensor, centroids: &Tensor) -> Result<RunTrack> {
    if embeddings.nrows() == 0 {
        return Err(Error::InvalidArgument("run has no trajectories".into()));
    }
    if embeddings.ncols() != centroids.ncols() {
        return Err(Error::DimMismatch("embedding and centroid widths differ".into()));
    }
    let labels: Vec<usize> = embeddings
        .rows()
        .into_iter()
        .map(|r| nearest_centroid(r, centroids))
        .collect();
    let changepoints = (1..labels.len()).filter(|&t| labels[t] != labels[t - 1]).collect();
    Ok(RunTrack { labels, changepoints })
}

/// Indices of the trajectories of run `run` (matched on the part of the run
/// id before `:`), ordered by training step then index.
pub fn run_indices(dataset: &TrajectoryDataset, run: &str) -> Vec<usize> {
    let key = run_prefix(run);
    let mut idx: Vec<usize> = (0..dataset.len())
        .filter(|&i| run_prefix(&dataset.trajectories[i].run_id) == key)
        .collect();
    idx.sort_by_key(|&i| (dataset.trajectories[i].train_step, i));
    idx
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn cluster_purity<T: Eq + std::hash::Hash + Clone>(clusters: &[usize], truth: &[T]) -> f64 {
    use std::collections::HashMap;
    if clusters.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<usize, HashMap<T, usize>> = HashMap::new();
    for (c, t) in clusters.iter().zip(truth) {
        *counts.entry(*c).or_default().entry(t.clone()).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / clusters.len() as f64
}

/// Per-agent mode labels recorded in generated run ids.
pub fn mode_labels(dataset: &TrajectoryDataset) -> Result<Vec<Vec<String>>> {
    dataset
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            parse_run_id(&t.run_id)
                .map(|(_, modes)| modes)
                .ok_or_else(|| Error::InvalidArgument(format!("trajectory {i}: run id {:?} has no mode labels", t.run_id)))
        })
        .collect()
}

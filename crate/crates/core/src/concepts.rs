//! Completeness-aware concept discovery in the joint latent space.
//!
//! Concepts are unit vectors obtained by K-means over unit-normalized `z_omega`
//! embeddings. A trajectory's concept score is its vector of thresholded
//! cosine similarities, renormalized. A small classifier maps scores to class
//! labels; its validation accuracy with some concepts masked out is the
//! completeness of the remaining subset, and Shapley values over that
//! set function rank the concepts per class.

use ndarray::{Array1, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evalmetrics::{kmeans, quantile_classes};
use crate::nn::{Adam, Mlp, ParamStore, Tensor};
use crate::trajdata::split_indices;
use crate::{rng, Error, Result};

/// Largest concept count accepted by exact Shapley enumeration.
pub const MAX_EXACT_CONCEPTS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSet {
    /// `m x D_omega`, unit rows.
    pub vectors: Tensor,
}

impl ConceptSet {
    pub fn new(vectors: Tensor) -> Result<Self> {
        for (j, row) in vectors.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("concept {j} has norm {norm}")));
            }
        }
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

fn unit(v: ArrayView1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        &v / norm
    } else {
        v.to_owned()
    }
}

fn unit_rows(points: &Tensor) -> Tensor {
    let mut out = points.clone();
    for mut row in out.rows_mut() {
        let u = unit(row.view());
        row.assign(&u);
    }
    out
}

/// K-means centroids of the unit-normalized embeddings, renormalized.
/// Centroids that coincide after normalization (or vanish) are dropped
/// with a warning, so the result may hold fewer than `m` concepts.
pub fn generate_concepts(z_omega: &Tensor, m: usize, seed: u64) -> Result<ConceptSet> {
    if m == 0 || z_omega.nrows() < m {
        return Err(Error::InvalidArgument(format!(
            "need at least {m} embeddings for {m} concepts, got {}",
            z_omega.nrows()
        )));
    }
    let fit = kmeans(&unit_rows(z_omega), m, seed)?;
    let mut kept: Vec<Array1<f64>> = Vec::with_capacity(m);
    for (j, c) in fit.centroids.rows().into_iter().enumerate() {
        if c.dot(&c) == 0.0 {
            log::warn!("concept {j} has a zero centroid; dropped");
            continue;
        }
        let u = unit(c);
        if kept.iter().any(|k| (k - &u).iter().all(|d| d.abs() < 1e-9)) {
            log::warn!("concept {j} duplicates an earlier concept; dropped");
            continue;
        }
        kept.push(u);
    }
    let d = z_omega.ncols();
    let flat: Vec<f64> = kept.iter().flat_map(|k| k.iter().copied()).collect();
    ConceptSet::new(Tensor::from_shape_vec((kept.len(), d), flat).expect("rows of width d"))
}

/// Thresholded cosine similarities `nu` (entries below `kappa` zeroed),
/// one row per embedding.
pub fn concept_products(z_omega: &Tensor, concepts: &ConceptSet, kappa: f64) -> Result<Tensor> {
    if z_omega.ncols() != concepts.dim() {
        return Err(Error::DimMismatch(format!(
            "embeddings have width {}, concepts {}",
            z_omega.ncols(),
            concepts.dim()
        )));
    }
    let mut nu = unit_rows(z_omega).dot(&concepts.vectors.t());
    nu.mapv_inplace(|v| if v < kappa { 0.0 } else { v });
    Ok(nu)
}

/// Rows of `nu` with entries outside `mask` zeroed, then unit-normalized
/// (all-zero rows stay zero).
pub fn normalize_scores(nu: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let mut out = nu.clone();
    for mut row in out.rows_mut() {
        if let Some(mask) = mask {
            for (v, &keep) in row.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        let u = unit(row.view());
        row.assign(&u);
    }
    out
}

/// Concept score of a single embedding.
pub fn concept_scores(z: &[f64], concepts: &ConceptSet, kappa: f64) -> Result<Vec<f64>> {
    let row = Tensor::from_shape_vec((1, z.len()), z.to_vec()).expect("one row");
    let nu = concept_products(&row, concepts, kappa)?;
    Ok(normalize_scores(&nu, None).row(0).to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden: usize,
    pub n_classes: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            n_classes: 5,
            steps: 10_000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 {
            return bad("head.hidden must be positive");
        }
        if self.n_classes < 2 {
            return bad("head.n_classes must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("head.batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("head.learning_rate must be positive");
        }
        Ok(())
    }
}

/// Classifier from concept scores to class probabilities: two hidden ReLU
/// layers and a softmax output. The layers carry no bias terms (theirs stay
/// at zero), so the logits scale with the input and the predicted class is
/// unchanged by positive rescaling of a score row. Masking a concept the head
/// ignores therefore leaves every prediction intact even though the
/// remaining scores are renormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptHead {
    pub params: ParamStore,
    pub mlp: Mlp,
    pub kappa: f64,
    pub n_classes: usize,
}

fn softmax_rows(logits: &mut Tensor) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl ConceptHead {
    pub fn new(m: usize, config: &HeadConfig, kappa: f64) -> Self {
        let mut params = ParamStore::new();
        let mut r = rng::seeded(config.seed);
        let mlp = Mlp::new(
            &mut params,
            "head",
            &[m, config.hidden, config.hidden, config.n_classes],
            &mut r,
        );
        Self {
            params,
            mlp,
            kappa,
            n_classes: config.n_classes,
        }
    }

    pub fn n_concepts(&self) -> usize {
        self.mlp.in_dim()
    }

    /// Class probabilities, one row per score row.
    pub fn probabilities(&self, scores: &Tensor) -> Tensor {
        let mut p = self.mlp.predict(&self.params, scores.view());
        softmax_rows(&mut p);
        p
    }

    /// Most probable class per row, lowest index on ties.
    pub fn classify(&self, scores: &Tensor) -> Vec<usize> {
        self.mlp
            .predict(&self.params, scores.view())
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, scores: &Tensor, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return f64::NAN;
        }
        let hits = self.classify(scores).iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len() as f64
    }
}

/// Trains a head by minibatch softmax cross-entropy with Adam. Batches are
/// drawn uniformly with replacement; step `t` uses stream `t` of the seed.
pub fn fit_concept_head(scores: &Tensor, labels: &[usize], kappa: f64, config: &HeadConfig) -> Result<ConceptHead> {
    config.validate()?;
    if scores.nrows() != labels.len() {
        return Err(Error::DimMismatch(format!(
            "{} score rows for {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= config.n_classes) {
        return Err(Error::InvalidArgument(format!("label {l} outside {} classes", config.n_classes)));
    }
    for k in 0..config.n_classes {
        if !labels.contains(&k) {
            return Err(Error::InvalidArgument(format!("class {k} missing from training labels")));
        }
    }
    let mut head = ConceptHead::new(scores.ncols(), config, kappa);
    let mut adam = Adam::new(&head.params, config.learning_rate, 0.9, 0.999);
    let n = labels.len();
    for step in 0..config.steps {
        let mut r = rng::stream(config.seed, step);
        let rows: Vec<usize> = (0..config.batch_size).map(|_| r.random_range(0..n)).collect();
        let x = scores.select(Axis(0), &rows);
        let (mut logits, cache) = head.mlp.forward(&head.params, x);
        softmax_rows(&mut logits);
        let b = rows.len() as f64;
        for (mut row, &i) in logits.rows_mut().into_iter().zip(&rows) {
            row[labels[i]] -= 1.0;
            row /= b;
        }
        let mut grads = head.params.zeros_like();
        head.mlp.backward(&head.params, &mut grads, &cache, logits, false);
        for layer in &head.mlp.layers {
            grads.get_mut(layer.b).fill(0.0);
        }
        adam.step(&mut head.params, &grads);
    }
    Ok(head)
}

/// Evaluates the completeness set function on a fixed validation set.
pub struct Completeness<'a> {
    pub head: &'a ConceptHead,
    /// Thresholded products `nu` of the validation embeddings.
    pub nu: Tensor,
    pub labels: Vec<usize>,
}

impl<'a> Completeness<'a> {
    pub fn new(head: &'a ConceptHead, concepts: &ConceptSet, z_omega: &Tensor, labels: &[usize]) -> Result<Self> {
        if concepts.len() != head.n_concepts() {
            return Err(Error::DimMismatch(format!(
                "head expects {} concepts, set has {}",
                head.n_concepts(),
                concepts.len()
            )));
        }
        if z_omega.nrows() != labels.len() {
            return Err(Error::DimMismatch("embedding and label counts differ".into()));
        }
        Ok(Self {
            head,
            nu: concept_products(z_omega, concepts, head.kappa)?,
            labels: labels.to_vec(),
        })
    }

    /// Accuracy with only the concepts in `subset` kept, over the validation
    /// points of `class` (all points when `None`). `None` when that class
    /// has no validation points.
    pub fn eta(&self, subset: &[bool], class: Option<usize>) -> Option<f64> {
        let rows: Vec<usize> = (0..self.labels.len())
            .filter(|&i| class.is_none_or(|k| self.labels[i] == k))
            .collect();
        if rows.is_empty() {
            return None;
        }
        let scores = normalize_scores(&self.nu.select(Axis(0), &rows), Some(subset));
        let labels: Vec<usize> = rows.iter().map(|&i| self.labels[i]).collect();
        Some(self.head.accuracy(&scores, &labels))
    }

    fn eta_mask(&self, mask: u64, class: Option<usize>) -> f64 {
        let m = self.head.n_concepts();
        let subset: Vec<bool> = (0..m).map(|j| mask >> j & 1 == 1).collect();
        self.eta(&subset, class).unwrap_or(f64::NAN)
    }
}

fn mask_of(subset: &[bool]) -> u64 {
    subset
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .fold(0, |acc, (j, _)| acc | 1 << j)
}

/// `|S|! (m - |S| - 1)! / m!` for every `|S|` in `0..m`.
fn shapley_weights(m: usize) -> Vec<f64> {
    let ln_fact = |n: usize| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
    (0..m)
        .map(|s| (ln_fact(s) + ln_fact(m - s - 1) - ln_fact(m)).exp())
        .collect()
}

/// Exact Shapley values of a set function over `m` players given as a table
/// of `2^m` values indexed by bitmask.
pub fn shapley_exact_table(m: usize, values: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), 1 << m);
    let w = shapley_weights(m);
    (0..m)
        .map(|j| {
            let bit = 1u64 << j;
            let mut acc = 0.0;
            for s in 0..(1u64 << m) {
                if s & bit == 0 {
                    acc += w[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]);
                }
            }
            acc
        })
        .collect()
}

/// Exact Shapley values by full subset enumeration; `value` is evaluated
/// once per subset, in parallel.
pub fn shapley_exact(m: usize, value: impl Fn(u64) -> f64 + Sync) -> Result<Vec<f64>> {
    if m == 0 || m > MAX_EXACT_CONCEPTS {
        return Err(Error::InvalidArgument(format!(
            "exact enumeration supports 1..={MAX_EXACT_CONCEPTS} concepts, got {m}"
        )));
    }
    let values: Vec<f64> = (0..1u64 << m).into_par_iter().map(&value).collect();
    Ok(shapley_exact_table(m, &values))
}

/// Permutation-sampling Shapley estimate: the average marginal contribution
/// of each player over `n_perms` uniformly random orderings.
pub fn shapley_sampled(m: usize, n_perms: usize, seed: u64, value: impl Fn(u64) -> f64 + Sync) -> Result<Vec<f64>> {
    if m == 0 || m > 64 {
        return Err(Error::InvalidArgument(format!("sampling supports 1..=64 concepts, got {m}")));
    }
    if n_perms == 0 {
        return Err(Error::InvalidArgument("n_perms must be at least 1".into()));
    }
    let empty = value(0);
    let contributions: Vec<Vec<f64>> = (0..n_perms)
        .into_par_iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng::stream(seed, p as u64));
            let mut out = vec![0.0; m];
            let (mut mask, mut prev) = (0u64, empty);
            for j in order {
                mask |= 1 << j;
                let v = value(mask);
                out[j] = v - prev;
                prev = v;
            }
            out
        })
        .collect();
    let mut total = vec![0.0; m];
    for c in &contributions {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|t| t / n_perms as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMethod {
    Exact,
    Sampled,
}

impl std::str::FromStr for ShapMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "sampled" => Ok(Self::Sampled),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Class-conditioned Shapley values of every concept with respect to the
/// completeness restricted to validation points of `class`.
pub fn concept_shap(
    eval: &Completeness<'_>,
    class: usize,
    method: ShapMethod,
    n_perms: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !eval.labels.contains(&class) {
        return Err(Error::InvalidArgument(format!("class {class} has no validation points")));
    }
    let m = eval.head.n_concepts();
    let value = |mask: u64| eval.eta_mask(mask, Some(class));
    match method {
        ShapMethod::Exact => shapley_exact(m, value),
        ShapMethod::Sampled => shapley_sampled(m, n_perms, seed, value),
    }
}

/// Indices of the `n` embeddings most cosine-similar to concept `j`, ties
/// broken by index.
pub fn top_concept_trajectories(concepts: &ConceptSet, z_omega: &Tensor, j: usize, n: usize) -> Result<Vec<usize>> {
    if j >= concepts.len() {
        return Err(Error::InvalidArgument(format!("concept {j} of {}", concepts.len())));
    }
    if n > z_omega.nrows() {
        return Err(Error::InvalidArgument(format!("{n} nearest of {} embeddings", z_omega.nrows())));
    }
    let sims = concept_products(z_omega, concepts, f64::NEG_INFINITY)?;
    let mut order: Vec<usize> = (0..z_omega.nrows()).collect();
    order.sort_by(|&a, &b| sims[[b, j]].total_cmp(&sims[[a, j]]).then(a.cmp(&b)));
    order.truncate(n);
    Ok(order)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptTarget {
    Dispersion,
    Return,
}

impl ConceptTarget {
    pub fn default_kappa(self) -> f64 {
        match self {
            Self::Dispersion => 0.0,
            Self::Return => 0.3,
        }
    }
}

impl std::str::FromStr for ConceptTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dispersion" => Ok(Self::Dispersion),
            "return" => Ok(Self::Return),
            other => Err(Error::InvalidArgument(format!("unknown target {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConceptConfig {
    pub n_concepts: usize,
    /// Defaults to the target's threshold when absent.
    pub kappa: Option<f64>,
    pub method: ShapMethod,
    pub n_perms: usize,
    pub val_fraction: f64,
    pub n_nearest: usize,
    pub seed: u64,
    pub head: HeadConfig,
}

impl Default for ConceptConfig {
    fn default() -> Self {
        Self {
            n_concepts: 16,
            kappa: None,
            method: ShapMethod::Exact,
            n_perms: 2000,
            val_fraction: 0.2,
            n_nearest: 20,
            seed: 0,
            head: HeadConfig::default(),
        }
    }
}

impl ConceptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_concepts == 0 {
            return Err(Error::Config("concepts.n_concepts must be positive".into()));
        }
        if self.method == ShapMethod::Exact && self.n_concepts > MAX_EXACT_CONCEPTS {
            return Err(Error::Config(format!(
                "concepts.n_concepts = {} exceeds the exact-method limit {MAX_EXACT_CONCEPTS}",
                self.n_concepts
            )));
        }
        if self.n_perms == 0 {
            return Err(Error::Config("concepts.n_perms must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("concepts.val_fraction must lie in (0, 1)".into()));
        }
        self.head.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    /// Accuracy on this class's validation points with all concepts.
    pub completeness: Option<f64>,
    pub shap: Option<Vec<f64>>,
    pub top_concept: Option<usize>,
    pub nearest_trajectories: Vec<usize>,
    pub mean_target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub target: ConceptTarget,
    pub kappa: f64,
    pub method: ShapMethod,
    pub n_concepts: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub empty_set_accuracy: f64,
    pub concepts: Vec<Vec<f64>>,
    pub classes: Vec<ClassReport>,
}

/// The whole pipeline: class labels from quantiles of `target_values`,
/// concepts from all embeddings, head trained on a train split, completeness
/// and per-class Shapley values on the validation split.
pub fn analyze_concepts(
    z_omega: &Tensor,
    target_values: &[f64],
    target: ConceptTarget,
    config: &ConceptConfig,
) -> Result<ConceptReport> {
    config.validate()?;
    if z_omega.nrows() != target_values.len() {
        return Err(Error::DimMismatch("embedding and target counts differ".into()));
    }
    let kappa = config.kappa.unwrap_or(target.default_kappa());
    let n_classes = config.head.n_classes;
    let labels = quantile_classes(target_values, n_classes)?;
    let concepts = generate_concepts(z_omega, config.n_concepts, config.seed)?;
    let (train, val) = split_indices(labels.len(), config.val_fraction, rng::derive_seed(config.seed, 1))?;
    let pick = |idx: &[usize]| (z_omega.select(Axis(0), idx), idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let (z_train, y_train) = pick(&train);
    let (z_val, y_val) = pick(&val);
    let nu_train = concept_products(&z_train, &concepts, kappa)?;
    let head = fit_concept_head(&normalize_scores(&nu_train, None), &y_train, kappa, &config.head)?;
    let train_accuracy = head.accuracy(&normalize_scores(&nu_train, None), &y_train);
    let eval = Completeness::new(&head, &concepts, &z_val, &y_val)?;
    let m = concepts.len();
    let all = vec![true; m];
    let validation_accuracy = eval.eta(&all, None).unwrap_or(f64::NAN);
    let empty_set_accuracy = eval.eta(&vec![false; m], None).unwrap_or(f64::NAN);
    let mut classes = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        let mean_target = members.iter().map(|&i| target_values[i]).sum::<f64>() / members.len().max(1) as f64;
        let shap = if y_val.contains(&k) {
            Some(concept_shap(&eval, k, config.method, config.n_perms, rng::derive_seed(config.seed, 2 + k as u64))?)
        } else {
            log::warn!("class {k} has no validation points; completeness undefined");
            None
        };
        let top_concept = shap.as_ref().map(|l| {
            (0..l.len())
                .reduce(|best, j| if l[j] > l[best] { j } else { best })
                .expect("at least one concept")
        });
        let nearest_trajectories = match top_concept {
            Some(j) => top_concept_trajectories(&concepts, z_omega, j, config.n_nearest.min(z_omega.nrows()))?,
            None => Vec::new(),
        };
        classes.push(ClassReport {
            class: k,
            completeness: eval.eta(&all, Some(k)),
            shap,
            top_concept,
            nearest_trajectories,
            mean_target,
        });
    }
    Ok(ConceptReport {
        target,
        kappa,
        method: config.method,
        n_concepts: m,
        train_accuracy,
        validation_accuracy,
        empty_set_accuracy,
        concepts: concepts.vectors.rows().into_iter().map(|r| r.to_vec()).collect(),
        classes,
    })
}

/// Concept mask from a list of kept indices.
pub fn subset_mask(m: usize, kept: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; m];
    for &j in kept {
        mask[j] = true;
    }
    debug_assert_eq!(mask_of(&mask).count_ones() as usize, kept.len());
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn scores_examples() {
        let c = ConceptSet::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(concept_scores(&[2.0, 0.0, 0.0], &c, 0.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(concept_scores(&[-1.0, -1.0, 0.0], &c, 0.0).unwrap(), vec![0.0, 0.0]);
        let s = concept_scores(&[1.0, 1.0, 0.0], &c, 0.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(s[0], h, epsilon = 1e-15);
        assert_relative_eq!(s[1], h, epsilon = 1e-15);
        // Cosine 0.6 survives a 0.5 threshold, 0.8 too; 0.6 does not survive 0.7.
        assert_eq!(concept_scores(&[0.6, 0.8, 0.0], &c, 0.7).unwrap(), vec![0.0, 1.0]);
        assert!(concept_scores(&[1.0, 0.0], &c, 0.0).is_err());
        assert!(ConceptSet::new(array![[2.0, 0.0]]).is_err());
    }

    #[test]
    fn generate_examples() {
        let pts = array![[3.0, 0.0], [0.0, -2.0], [1.0, 1.0]];
        let c = generate_concepts(&pts, 3, 0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut rows: Vec<Vec<f64>> = c.vectors.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let want = [[0.0, -1.0], [h, h], [1.0, 0.0]];
        for (r, w) in rows.iter().zip(want) {
            assert_relative_eq!(r[0], w[0], epsilon = 1e-12);
            assert_relative_eq!(r[1], w[1], epsilon = 1e-12);
        }
        let dup = array![[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        assert_eq!(generate_concepts(&dup, 3, 0).unwrap().len(), 2);
        assert!(generate_concepts(&dup, 4, 0).is_err());
    }

    #[test]
    fn antipodal_blobs_give_blob_directions() {
        let mut r = rng::seeded(1);
        let mut rows = Vec::new();
        for sign in [1.0, -1.0] {
            for _ in 0..40 {
                rows.extend([sign * 4.0 + r.random_range(-0.3..0.3), sign * 3.0 + r.random_range(-0.3..0.3)]);
            }
        }
        let pts = Tensor::from_shape_vec((80, 2), rows).unwrap();
        let c = generate_concepts(&pts, 2, 5).unwrap();
        let mut firsts: Vec<f64> = c.vectors.column(0).to_vec();
        firsts.sort_by(f64::total_cmp);
        assert!((firsts[0] + 0.8).abs() < 0.02 && (firsts[1] - 0.8).abs() < 0.02);
    }

    #[test]
    fn shapley_two_player_formula() {
        // Values indexed by mask: {}, {1}, {2}, {1,2}.
        let v = [0.1, 0.5, 0.3, 0.9];
        let l = shapley_exact_table(2, &v);
        assert_relative_eq!(l[0], 0.5 * (v[1] - v[0]) + 0.5 * (v[3] - v[2]), epsilon = 1e-15);
        assert_relative_eq!(l[1], 0.5 * (v[2] - v[0]) + 0.5 * (v[3] - v[1]), epsilon = 1e-15);
        assert_eq!(shapley_exact(3, |_| 0.7).unwrap(), vec![0.0; 3]);
        assert!(shapley_exact(17, |_| 0.0).is_err());
        assert!(shapley_sampled(3, 0, 0, |_| 0.0).is_err());
    }

    #[test]
    fn sampled_matches_exact_on_a_game() {
        let w = [0.3, -0.1, 0.2, 0.05, 0.0, 0.4];
        let game = |mask: u64| {
            let lin: f64 = (0..6).filter(|j| mask >> j & 1 == 1).map(|j| w[j]).sum();
            lin + if mask & 0b11 == 0b11 { 0.2 } else { 0.0 }
        };
        let exact = shapley_exact(6, game).unwrap();
        let sampled = shapley_sampled(6, 4000, 3, game).unwrap();
        for (a, b) in exact.iter().zip(&sampled) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
        assert_relative_eq!(exact[0], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn head_fits_separable_and_constant_labels() {
        let mut r = rng::seeded(2);
        let n = 200;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let k = i % 5;
            let mut v = vec![0.0; 5];
            v[k] = 1.0;
            for x in &mut v {
                *x += r.random_range(0.0..0.1);
            }
            rows.extend(v);
            labels.push(k);
        }
        let scores = normalize_scores(&Tensor::from_shape_vec((n, 5), rows).unwrap(), None);
        let cfg = HeadConfig { steps: 3000, learning_rate: 1e-2, ..HeadConfig::default() };
        let head = fit_concept_head(&scores, &labels, 0.0, &cfg).unwrap();
        assert!(head.accuracy(&scores, &labels) > 0.95);
        assert_eq!(head, fit_concept_head(&scores, &labels, 0.0, &cfg).unwrap());

        let two = HeadConfig { n_classes: 2, steps: 500, ..cfg };
        let mut lab = vec![0; n];
        lab[0] = 1;
        assert!(fit_concept_head(&scores, &vec![0; n], 0.0, &two).is_err());
        let head = fit_concept_head(&scores, &lab, 0.0, &two).unwrap();
        assert!(head.accuracy(&scores, &vec![0; n]) >= 0.99);
    }

    #[test]
    fn top_trajectories_examples() {
        let c = ConceptSet::new(array![[1.0, 0.0]]).unwrap();
        let z = array![[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [-1.0, 0.2], [2.0, 2.0]];
        assert_eq!(top_concept_trajectories(&c, &z, 0, 5).unwrap(), vec![2, 1, 4, 0, 3]);
        assert_eq!(top_concept_trajectories(&c, &z, 0, 1).unwrap(), vec![2]);
        assert!(top_concept_trajectories(&c, &z, 0, 6).is_err());
    }

    proptest! {
        #[test]
        fn scores_are_unit_or_zero(
            z in proptest::collection::vec(-3f64..3.0, 4),
            c in proptest::collection::vec(-1f64..1.0, 12),
            kappa in -0.5f64..0.9,
        ) {
            let mut cv = Tensor::from_shape_vec((3, 4), c).unwrap();
            prop_assume!(cv.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
            cv = unit_rows(&cv);
            let set = ConceptSet::new(cv).unwrap();
            let s = concept_scores(&z, &set, kappa).unwrap();
            let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        }

        #[test]
        fn exact_shapley_is_efficient(values in proptest::collection::vec(0f64..1.0, 16)) {
            let l = shapley_exact_table(4, &values);
            prop_assert!((l.iter().sum::<f64>() - (values[15] - values[0])).abs() < 1e-12);
        }
    }
}

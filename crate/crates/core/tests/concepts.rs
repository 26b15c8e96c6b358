use mohba::concepts::{
    analyze_concepts, concept_shap, fit_concept_head, generate_concepts, normalize_scores, concept_products,
    subset_mask, Completeness, ConceptConfig, ConceptHead, ConceptSet, ConceptTarget, HeadConfig, ShapMethod,
};
use mohba::nn::Tensor;
use mohba::rng;
use rand::Rng;

/// Embeddings in 4-D scattered around eight directions; the class is the
/// direction index modulo 5.
fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let dirs: Vec<[f64; 4]> = (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 4.0;
            [a.cos(), a.sin(), (2.0 * a).cos() * 0.5, 0.3]
        })
        .collect();
    let mut z = Tensor::zeros((n, 4));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 8;
        for j in 0..4 {
            z[[i, j]] = dirs[k][j] + r.random_range(-0.1..0.1);
        }
        labels.push(k % 5);
    }
    (z, labels)
}

fn trained(m: usize) -> (ConceptSet, ConceptHead, Tensor, Vec<usize>) {
    let (z, labels) = blobs(320, 1);
    let concepts = generate_concepts(&z, m, 2).unwrap();
    let scores = normalize_scores(&concept_products(&z, &concepts, 0.0).unwrap(), None);
    let cfg = HeadConfig { steps: 2000, learning_rate: 1e-2, ..HeadConfig::default() };
    let head = fit_concept_head(&scores, &labels, 0.0, &cfg).unwrap();
    let (zv, lv) = blobs(160, 9);
    (concepts, head, zv, lv)
}

#[test]
fn completeness_examples() {
    let (concepts, head, z, labels) = trained(8);
    let eval = Completeness::new(&head, &concepts, &z, &labels).unwrap();
    let m = concepts.len();
    let full = eval.eta(&vec![true; m], None).unwrap();
    let scores = normalize_scores(&concept_products(&z, &concepts, 0.0).unwrap(), None);
    assert_eq!(full, head.accuracy(&scores, &labels));
    assert!(full > 0.9, "validation accuracy {full}");

    let empty = eval.eta(&vec![false; m], None).unwrap();
    let zeros = Tensor::zeros((labels.len(), m));
    let constant = head.classify(&zeros)[0];
    let expected = labels.iter().filter(|&&l| l == constant).count() as f64 / labels.len() as f64;
    assert_eq!(empty, expected);

    // A class absent from validation has undefined completeness.
    let only_zero: Vec<usize> = labels.iter().map(|_| 0).collect();
    let eval0 = Completeness::new(&head, &concepts, &z, &only_zero).unwrap();
    assert!(eval0.eta(&vec![true; m], Some(3)).is_none());
    assert!(concept_shap(&eval0, 3, ShapMethod::Exact, 1, 0).is_err());
}

#[test]
fn ignored_concept_is_a_dummy_player() {
    let (concepts, mut head, z, labels) = trained(6);
    let w = head.mlp.layers[0].w;
    head.params.get_mut(w).row_mut(2).fill(0.0);
    let eval = Completeness::new(&head, &concepts, &z, &labels).unwrap();
    let m = concepts.len();
    for k in 0..5 {
        let l = concept_shap(&eval, k, ShapMethod::Exact, 1, 0).unwrap();
        assert_eq!(l[2], 0.0, "class {k}: {l:?}");
        let total: f64 = l.iter().sum();
        let eff = eval.eta(&vec![true; m], Some(k)).unwrap() - eval.eta(&vec![false; m], Some(k)).unwrap();
        assert!((total - eff).abs() < 1e-12, "class {k}: {total} vs {eff}");
    }
    let mut without = vec![true; m];
    without[2] = false;
    assert_eq!(eval.eta(&without, None), eval.eta(&vec![true; m], None));
}

#[test]
fn completeness_is_invariant_to_concept_order() {
    let (concepts, head, z, labels) = trained(5);
    let m = concepts.len();
    let perm: Vec<usize> = (0..m).rev().collect();
    let permuted = ConceptSet::new(concepts.vectors.select(ndarray::Axis(0), &perm)).unwrap();
    let mut head2 = head.clone();
    let w = head.mlp.layers[0].w;
    let permuted_w = head.params.get(w).select(ndarray::Axis(0), &perm);
    *head2.params.get_mut(w) = permuted_w;
    let a = Completeness::new(&head, &concepts, &z, &labels).unwrap();
    let b = Completeness::new(&head2, &permuted, &z, &labels).unwrap();
    for kept in [vec![0, 1], vec![2], vec![0, 3, 4], vec![]] {
        let s = subset_mask(m, &kept);
        let s_perm: Vec<bool> = perm.iter().map(|&j| s[j]).collect();
        assert_eq!(a.eta(&s, None), b.eta(&s_perm, None));
    }
}

#[test]
fn sampled_shapley_tracks_exact_at_eight_concepts() {
    let (concepts, head, z, labels) = trained(8);
    assert_eq!(concepts.len(), 8);
    let eval = Completeness::new(&head, &concepts, &z, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..5 {
        let exact = concept_shap(&eval, k, ShapMethod::Exact, 1, 0).unwrap();
        let sampled = concept_shap(&eval, k, ShapMethod::Sampled, 2000, 7).unwrap();
        for (a, b) in exact.iter().zip(&sampled) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 0.05, "max |exact - sampled| = {worst}");
}

#[test]
fn report_covers_every_class() {
    let (z, _) = blobs(200, 4);
    let target: Vec<f64> = (0..200).map(|i| z[[i, 0]] + 0.01 * i as f64).collect();
    let cfg = ConceptConfig {
        n_concepts: 6,
        head: HeadConfig { steps: 300, ..HeadConfig::default() },
        kappa: Some(0.1),
        ..ConceptConfig::default()
    };
    let report = analyze_concepts(&z, &target, ConceptTarget::Dispersion, &cfg).unwrap();
    assert_eq!(report.classes.len(), 5);
    assert_eq!(report.kappa, 0.1);
    for c in &report.classes {
        assert_eq!(c.shap.as_ref().unwrap().len(), report.n_concepts);
        assert_eq!(c.nearest_trajectories.len(), 20);
    }
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"target\":\"dispersion\""));

    let default_kappa = analyze_concepts(&z, &target, ConceptTarget::Return, &ConceptConfig { kappa: None, ..cfg.clone() }).unwrap();
    assert_eq!(default_kappa.kappa, 0.3);
    let too_many = ConceptConfig { n_concepts: 24, ..cfg };
    assert!(analyze_concepts(&z, &target, ConceptTarget::Dispersion, &too_many).is_err());
}

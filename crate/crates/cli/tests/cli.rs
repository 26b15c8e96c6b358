use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mohba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mohba"))
        .args(args)
        .env_remove("MOHBA_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = mohba(args);
    assert!(
        out.status.success(),
        "mohba {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap()
}

fn tiny_config(dir: &Path, domain: &str, steps: u64) -> PathBuf {
    let cfg = serde_json::json!({
        "corpus": {
            "domain": domain,
            "n_runs": 3,
            "trajectories_per_run": 8,
            "episode_len": 10,
            "seed": 4
        },
        "model": {
            "d_omega": 2, "d_alpha": 2, "gmm_components": 2,
            "rnn_hidden": 4, "mlp_hidden": 4, "policy_hidden": 4
        },
        "train": { "steps": steps, "batch_size": 4, "anneal_period": 20, "log_every": 5, "seed": 2 },
        "lstm": { "hidden": 4, "head_hidden": 4 },
        "concepts": { "n_concepts": 4, "head": { "steps": 50 } }
    });
    let path = dir.join(format!("{domain}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

/// A generated corpus plus a short training run.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
    checkpoint: PathBuf,
}

fn fixture(domain: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = tiny_config(&root, domain, 20);
    let gen = root.join("gen");
    ok(&["gen-data", "--config", s(&config), "--out", s(&gen)]);
    let data = gen.join("dataset.jsonl");
    let run = root.join("run");
    ok(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&run)]);
    Fixture {
        checkpoint: run.join("checkpoint.bin"),
        _dir: dir,
        root,
        config,
        data,
    }
}

impl Fixture {
    fn analyze(&self, out: &str, rest: &[&str]) -> PathBuf {
        let dir = self.root.join(out);
        let mut args = vec![
            "analyze",
            "--checkpoint",
            s(&self.checkpoint),
            "--data",
            s(&self.data),
            "--config",
            s(&self.config),
            "--out",
            s(&dir),
        ];
        args.extend_from_slice(rest);
        ok(&args);
        dir
    }
}

#[test]
fn missing_output_is_a_usage_error() {
    let out = mohba(&["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mohba(&["analyze", "--checkpoint", "x", "--data", "y", "--out", "z", "cluster", "--space", "beta"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_reproducible_and_counts_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), "hill", 1);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--config", s(&config), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&config), "--out", s(&b), "--workers", "3"]);
    for f in ["dataset.jsonl", "stats.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = std::fs::read_to_string(a.join("dataset.jsonl")).unwrap();
    // A header line plus one line per trajectory.
    assert_eq!(text.lines().count(), 1 + 3 * 8);
    assert_eq!(read_json(a.join("stats.json"))["n_trajectories"], 24);
    assert!(a.join("metadata.json").exists());
}

#[test]
fn bad_config_is_reported_with_its_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"corpus": {"n_runs": "many"}}"#).unwrap();
    let out = mohba(&["gen-data", "--config", s(&config), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.n_runs"));
}

#[test]
fn training_resumes_to_the_same_checkpoint() {
    let f = fixture("hill");
    let half = f.root.join("half");
    let rest = f.root.join("rest");
    let steps = |n: &str, out: &Path, resume: Option<&Path>| {
        let mut args = vec!["train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(out), "--steps", n];
        if let Some(r) = resume {
            args.extend_from_slice(&["--resume", s(r)]);
        }
        ok(&args);
    };
    steps("10", &half, None);
    steps("20", &rest, Some(&half.join("checkpoint.bin")));
    let full = f.checkpoint.parent().unwrap();
    assert_eq!(
        std::fs::read(full.join("checkpoint.bin")).unwrap(),
        std::fs::read(rest.join("checkpoint.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(full.join("metrics.csv")).unwrap(),
        std::fs::read_to_string(rest.join("metrics.csv")).unwrap()
    );
}

#[test]
fn baselines_train_and_reject_unknown_methods() {
    let f = fixture("coord");
    for method in ["lstm", "vae"] {
        let out = f.root.join(method);
        ok(&[
            "baseline", "--method", method, "--config", s(&f.config), "--data", s(&f.data), "--out", s(&out), "--steps", "3",
        ]);
        assert!(out.join("checkpoint.bin").exists());
    }
    let out = mohba(&["baseline", "--method", "gru", "--data", s(&f.data), "--out", s(&f.root.join("x"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analysis_outputs() {
    let f = fixture("hill");
    let embed = f.analyze("embed", &["embed"]);
    let csv = std::fs::read_to_string(embed.join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 24);
    assert!(csv.starts_with("traj_id,z_omega_0,z_omega_1,z_alpha_0_0"));

    let clusters = read_json(f.analyze("cluster", &["cluster", "--k", "3"]).join("clusters.json"));
    let labels = clusters["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 24);
    assert!(labels.iter().all(|l| l.as_u64().unwrap() < 3));
    let alpha = read_json(f.analyze("alpha", &["cluster", "--space", "alpha", "--agent", "1"]).join("clusters.json"));
    assert_eq!(alpha["agent"], 1);

    let ictd = read_json(f.analyze("ictd", &["ictd", "--k", "4"]).join("ictd.json"));
    assert!(ictd["ictd"].as_f64().unwrap() >= 0.0);
    let apl = read_json(f.analyze("apl", &["apl"]).join("apl.json"));
    assert!(apl["apl"].as_f64().unwrap() > 0.0);

    let proj = f.analyze("proj", &["project", "--k", "3"]);
    assert_eq!(std::fs::read_to_string(proj.join("projection.csv")).unwrap().lines().count(), 25);
    assert!(proj.join("projection.png").exists());

    // With a single cluster every label agrees, so there are no changepoints.
    let track = read_json(f.analyze("track", &["track", "--run-id", "run0", "--k", "1"]).join("track.json"));
    assert_eq!(track["trajectories"].as_array().unwrap().len(), 8);
    assert!(track["changepoints"].as_array().unwrap().is_empty());

    // Reruns are byte-identical.
    let again = f.analyze("cluster2", &["cluster", "--k", "3"]);
    assert_eq!(
        std::fs::read(f.root.join("cluster/clusters.json")).unwrap(),
        std::fs::read(again.join("clusters.json")).unwrap()
    );
}

#[test]
fn concepts_report_and_errors() {
    let f = fixture("hill");
    let out = f.root.join("concepts");
    let base = [
        "concepts",
        "--checkpoint",
        s(&f.checkpoint),
        "--data",
        s(&f.data),
        "--config",
        s(&f.config),
        "--out",
        s(&out),
    ];
    let mut args = base.to_vec();
    args.extend_from_slice(&["--target", "dispersion", "--kappa", "0.25"]);
    ok(&args);
    let report = read_json(out.join("concepts.json"));
    assert_eq!(report["kappa"], 0.25);
    let classes = report["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 5);
    // Five validation points may miss a class; its values are then null.
    let mut scored = 0;
    for c in classes {
        assert_eq!(c["shap"].is_null(), c["completeness"].is_null());
        if let Some(l) = c["shap"].as_array() {
            assert_eq!(l.len(), 4);
            scored += 1;
        }
    }
    assert!(scored > 0);
    assert!(out.join("concept_class0.png").exists());

    // Hill corpora carry rewards; strip them to check the return target.
    let text = std::fs::read_to_string(&f.data).unwrap();
    let mut lines = text.lines();
    let mut header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    header["meta"]["has_rewards"] = Value::Bool(false);
    let mut stripped = header.to_string() + "\n";
    for line in lines {
        let mut t: Value = serde_json::from_str(line).unwrap();
        t.as_object_mut().unwrap().remove("rewards");
        stripped += &(t.to_string() + "\n");
    }
    let rewardless = f.root.join("rewardless.jsonl");
    std::fs::write(&rewardless, stripped).unwrap();
    let mut args = base.to_vec();
    args[4] = s(&rewardless);
    args.extend_from_slice(&["--target", "return"]);
    let out = mohba(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no rewards"));
}

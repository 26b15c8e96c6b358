mod common;

use common::tiny_hparams;
use mohba::baselines::{FlatVae, LstmBaseline, LstmConfig, LstmHyperparams};
use mohba::behaviorgen::{generate_corpus, CorpusConfig, Domain};
use mohba::checkpoint::{load_checkpoint, load_checkpoint_expecting, read_header, save_checkpoint, ModelKind};
use mohba::training::{resume, train, MetricsLog, OptimizerState};
use mohba::{Error, ModelConfig, MohbaModel, TrainConfig, TrajectoryDataset};

fn corpus(n_runs: usize, per_run: usize) -> TrajectoryDataset {
    generate_corpus(&CorpusConfig {
        domain: Domain::Hill,
        n_runs,
        trajectories_per_run: per_run,
        episode_len: 12,
        seed: 5,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn model(data: &TrajectoryDataset) -> MohbaModel {
    MohbaModel::new(ModelConfig::new(&tiny_hparams(1), &data.meta), 3).unwrap()
}

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        learning_rate: 3e-3,
        anneal_period: 200,
        beta_max: 1e-2,
        log_every: 10,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let data = corpus(2, 3);
    let mut m = model(&data);
    let before = m.params.clone();
    let (state, log) = train(&mut m, &data, &cfg(0)).unwrap();
    assert_eq!(m.params, before);
    assert_eq!(state.step, 0);
    assert!(log.rows.is_empty());
}

#[test]
fn reconstruction_improves_on_a_single_mode_corpus() {
    let data = generate_corpus(&CorpusConfig {
        domain: Domain::Hill,
        n_runs: 1,
        trajectories_per_run: 10,
        episode_len: 12,
        seed: 2,
        ..CorpusConfig::default()
    })
    .unwrap();
    let mut m = model(&data);
    let c = TrainConfig { log_every: 1, ..cfg(400) };
    let (_, log) = train(&mut m, &data, &c).unwrap();
    let first = log.mean_over(0, 40, |r| r.recon).unwrap();
    let last = log.mean_over(360, 400, |r| r.recon).unwrap();
    assert!(last > first, "recon {first} -> {last}");
}

#[test]
fn same_seed_gives_identical_logs_and_csv() {
    let data = corpus(2, 3);
    let (mut a, mut b) = (model(&data), model(&data));
    let (_, la) = train(&mut a, &data, &cfg(60)).unwrap();
    let (_, lb) = train(&mut b, &data, &cfg(60)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(la.to_csv(), lb.to_csv());
    assert_eq!(a.params, b.params);
    assert!(la.to_csv().starts_with("step,loss,recon,kl_local,kl_joint,beta\n"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    la.write_csv(&path).unwrap();
    assert_eq!(MetricsLog::read_csv(&path).unwrap(), la);
}

#[test]
fn checkpoint_round_trip_and_resume_is_step_identical() {
    let data = corpus(2, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");

    let mut straight = model(&data);
    let (straight_state, straight_log) = train(&mut straight, &data, &cfg(100)).unwrap();

    let mut half = model(&data);
    let (state, first_log) = train(&mut half, &data, &cfg(50)).unwrap();
    save_checkpoint(&half, Some(&state), &path).unwrap();
    let (mut loaded, loaded_state): (MohbaModel, _) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.params, half.params);
    let mut loaded_state: OptimizerState = loaded_state.unwrap();
    assert_eq!(loaded_state.adam.m, state.adam.m);
    assert_eq!(loaded_state.adam.v, state.adam.v);
    assert_eq!(loaded_state.step, 50);

    let second_log = resume(&mut loaded, &mut loaded_state, &data, &cfg(100)).unwrap();
    assert_eq!(loaded.params, straight.params);
    assert_eq!(loaded_state.adam.m, straight_state.adam.m);
    let mut joined = first_log.rows.clone();
    joined.extend(second_log.rows);
    assert_eq!(joined, straight_log.rows);

    // Saving the same state twice gives identical bytes.
    let again = dir.path().join("ck2.bin");
    save_checkpoint(&half, Some(&state), &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_errors() {
    let data = corpus(1, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let m = model(&data);
    save_checkpoint(&m, None, &path).unwrap();
    assert_eq!(read_header(&path).unwrap().kind, ModelKind::Mohba);

    let mut other = m.config.clone();
    other.d_omega = 3;
    let err = load_checkpoint_expecting::<MohbaModel>(&path, &other).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    assert!(load_checkpoint::<FlatVae>(&path).is_err());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint::<MohbaModel>(&path), Err(Error::Checkpoint(_))));
    assert!(matches!(
        load_checkpoint::<MohbaModel>(dir.path().join("missing.bin")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn baselines_checkpoint_round_trip() {
    let data = corpus(1, 2);
    let dir = tempfile::tempdir().unwrap();
    let flat = FlatVae::new(ModelConfig::new(&tiny_hparams(1), &data.meta), 1).unwrap();
    save_checkpoint(&flat, None, dir.path().join("f.bin")).unwrap();
    let (back, opt): (FlatVae, _) = load_checkpoint(dir.path().join("f.bin")).unwrap();
    assert_eq!(back, flat);
    assert!(opt.is_none());

    let hp = LstmHyperparams { hidden: 3, head_hidden: 2 };
    let lstm = LstmBaseline::new(LstmConfig::new(&hp, &data.meta), 1).unwrap();
    save_checkpoint(&lstm, None, dir.path().join("l.bin")).unwrap();
    let (back, _): (LstmBaseline, _) = load_checkpoint(dir.path().join("l.bin")).unwrap();
    assert_eq!(back.params, lstm.params);
}

#[test]
fn mismatched_data_is_rejected() {
    let hill = corpus(1, 2);
    let coord = generate_corpus(&CorpusConfig {
        domain: Domain::Coord,
        n_runs: 1,
        trajectories_per_run: 2,
        ..CorpusConfig::default()
    })
    .unwrap();
    let mut m = model(&hill);
    assert!(train(&mut m, &coord, &cfg(1)).is_err());
}

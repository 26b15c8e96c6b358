use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use mohba::baselines::{FlatVae, LstmBaseline, LstmConfig};
use mohba::behaviorgen::generate_corpus_with_workers;
use mohba::checkpoint::{load_checkpoint, load_checkpoint_expecting, read_header, save_checkpoint, Checkpointable, ModelKind};
use mohba::concepts::{analyze_concepts, ConceptTarget, ShapMethod};
use mohba::config::RunConfig;
use mohba::envs::return_stats;
use mohba::evalmetrics::{
    apl, dispersions, embed_dataset, embed_dataset_sampled, ictd, kmeans, pca_project, run_indices, total_returns,
    track_run, Embedder, EmbeddingTable,
};
use mohba::nn::Tensor;
use mohba::plot::{scatter_png, trajectories_png};
use mohba::trajdata::{load_dataset, save_dataset};
use mohba::training::{resume, MetricsLog, OptimizerState};
use mohba::{Error, ModelConfig, MohbaModel, Result, TrainConfig, TrajectoryDataset};
use serde::Serialize;

use crate::{Analysis, AnalyzeArgs, Cli, Command, Method, ShapMethodArg, Space, SpaceArgs, Target, TrainArgs};

const PNG_SIZE: u32 = 512;
const HISTOGRAM_BINS: usize = 10;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env_seed()?;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

/// Run details that vary between invocations live here, so the primary
/// outputs stay byte-identical across reruns.
fn write_metadata(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time": unix_time,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "config": cfg,
    });
    write_json(dir.join("metadata.json"), &meta)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, workers } => gen_data(config.as_deref(), &out, workers),
        Command::Train(args) => {
            let cfg = load_config(args.config.as_deref())?;
            let data = load_dataset(&args.data)?;
            let model_cfg = ModelConfig::new(&cfg.model, &data.meta);
            let tc = cfg.train.clone();
            fit::<MohbaModel>(&args, &cfg, &tc, &data, model_cfg, "train")
        }
        Command::Baseline { method, train } => {
            let cfg = load_config(train.config.as_deref())?;
            let data = load_dataset(&train.data)?;
            let tc = cfg.baseline_train().clone();
            match method {
                Method::Lstm => {
                    let mc = LstmConfig::new(&cfg.lstm, &data.meta);
                    fit::<LstmBaseline>(&train, &cfg, &tc, &data, mc, "baseline lstm")
                }
                Method::Vae => {
                    let mc = ModelConfig::new(&cfg.model, &data.meta);
                    fit::<FlatVae>(&train, &cfg, &tc, &data, mc, "baseline vae")
                }
            }
        }
        Command::Analyze { common, action } => analyze(&common, action),
        Command::Concepts {
            common,
            target,
            m,
            kappa,
            method,
            n_perms,
        } => concepts(&common, target, m, kappa, method, n_perms),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, workers: usize) -> Result<()> {
    let cfg = load_config(config)?;
    ensure_dir(out)?;
    let data = generate_corpus_with_workers(&cfg.corpus, workers.max(1))?;
    info!("generated {} trajectories", data.len());
    save_dataset(&data, out.join("dataset.jsonl"))?;
    write_json(out.join("stats.json"), &return_stats(&data, HISTOGRAM_BINS)?)?;
    write_metadata(out, "gen-data", &cfg)
}

trait Build: Checkpointable {
    fn fresh(config: Self::Config, seed: u64) -> Result<Self>;
}

impl Build for MohbaModel {
    fn fresh(config: ModelConfig, seed: u64) -> Result<Self> {
        MohbaModel::new(config, seed)
    }
}

impl Build for FlatVae {
    fn fresh(config: ModelConfig, seed: u64) -> Result<Self> {
        FlatVae::new(config, seed)
    }
}

impl Build for LstmBaseline {
    fn fresh(config: LstmConfig, seed: u64) -> Result<Self> {
        LstmBaseline::new(config, seed)
    }
}

fn fit<M: Build>(
    args: &TrainArgs,
    cfg: &RunConfig,
    tc: &TrainConfig,
    data: &TrajectoryDataset,
    model_cfg: M::Config,
    command: &str,
) -> Result<()> {
    let mut tc = tc.clone();
    if let Some(steps) = args.steps {
        tc.steps = steps;
    }
    tc.validate()?;
    ensure_dir(&args.out)?;

    let (mut model, mut state, mut log) = match &args.resume {
        Some(ck) => {
            let (model, state) = load_checkpoint_expecting::<M>(ck, &model_cfg)?;
            let state = state.ok_or_else(|| Error::Checkpoint(format!("{}: no optimizer state", ck.display())))?;
            let previous = ck.parent().map(|d| d.join("metrics.csv")).filter(|p| p.exists());
            let mut log = match previous {
                Some(p) => MetricsLog::read_csv(p)?,
                None => MetricsLog::default(),
            };
            log.rows.retain(|r| r.step < state.step);
            info!("resuming from step {}", state.step);
            (model, state, log)
        }
        None => {
            let model = M::fresh(model_cfg, tc.seed)?;
            let state = OptimizerState::new(model.params(), &tc);
            (model, state, MetricsLog::default())
        }
    };
    let new_rows = resume(&mut model, &mut state, data, &tc)?;
    log.rows.extend(new_rows.rows);
    if let Some(last) = log.rows.last() {
        info!("step {}: loss {}", last.step, last.loss);
    }
    save_checkpoint(&model, Some(&state), args.out.join("checkpoint.bin"))?;
    log.write_csv(args.out.join("metrics.csv"))?;
    write_metadata(&args.out, command, cfg)
}

enum Loaded {
    Mohba(MohbaModel),
    Flat(FlatVae),
    Lstm(LstmBaseline),
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        Ok(match read_header(path)?.kind {
            ModelKind::Mohba => Loaded::Mohba(load_checkpoint(path)?.0),
            ModelKind::FlatVae => Loaded::Flat(load_checkpoint(path)?.0),
            ModelKind::Lstm => Loaded::Lstm(load_checkpoint(path)?.0),
        })
    }

    fn embedder(&self) -> &dyn Embedder {
        match self {
            Loaded::Mohba(m) => m,
            Loaded::Flat(m) => m,
            Loaded::Lstm(m) => m,
        }
    }
}

struct Session {
    cfg: RunConfig,
    data: TrajectoryDataset,
    model: Loaded,
    provenance: String,
}

impl Session {
    fn open(args: &AnalyzeArgs) -> Result<Self> {
        let cfg = load_config(args.config.as_deref())?;
        let data = load_dataset(&args.data)?;
        let model = Loaded::open(&args.checkpoint)?;
        model.embedder().check_meta(&data.meta)?;
        ensure_dir(&args.out)?;
        Ok(Self {
            cfg,
            data,
            model,
            provenance: args.checkpoint.display().to_string(),
        })
    }

    fn embeddings(&self) -> Result<EmbeddingTable> {
        embed_dataset(self.model.embedder(), &self.data, &self.provenance)
    }
}

fn points(table: &EmbeddingTable, space: SpaceArgs) -> Result<Tensor> {
    match space.space {
        Space::Omega => Ok(table.z_omega.clone()),
        Space::Alpha => {
            let z = table
                .z_alpha
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("this model has no local latents".into()))?;
            match space.agent {
                None => Ok(z.clone()),
                Some(i) => table
                    .agent(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("agent {i} out of range (n_agents {})", table.n_agents))),
            }
        }
    }
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    k: usize,
    space: &'static str,
    agent: Option<usize>,
    seed: u64,
    #[serde(flatten)]
    assignment: &'a mohba::evalmetrics::ClusterAssignment,
}

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Omega => "omega",
        Space::Alpha => "alpha",
    }
}

fn analyze(args: &AnalyzeArgs, action: Analysis) -> Result<()> {
    let s = Session::open(args)?;
    let out = &args.out;
    let seed = s.cfg.analysis.seed;
    match action {
        Analysis::Embed { sample_seed } => {
            let table = match (sample_seed, &s.model) {
                (None, _) => s.embeddings()?,
                (Some(seed), Loaded::Mohba(m)) => embed_dataset_sampled(m, &s.data, seed, &s.provenance)?,
                (Some(_), _) => {
                    return Err(Error::InvalidArgument("--sample-seed needs a hierarchical model checkpoint".into()))
                }
            };
            table.write_csv(out.join("embeddings.csv"))?;
        }
        Analysis::Cluster { k, space } => {
            let k = k.unwrap_or(s.cfg.analysis.k);
            let fit = kmeans(&points(&s.embeddings()?, space)?, k, seed)?;
            let report = ClusterReport {
                k,
                space: space_name(space.space),
                agent: space.agent,
                seed,
                assignment: &fit,
            };
            write_json(out.join("clusters.json"), &report)?;
        }
        Analysis::Ictd { k, space } => {
            let k = k.unwrap_or(s.cfg.analysis.ictd_k);
            let fit = kmeans(&points(&s.embeddings()?, space)?, k, seed)?;
            let value = ictd(&s.data, &fit.labels)?;
            let report = serde_json::json!({
                "k": k,
                "space": space_name(space.space),
                "agent": space.agent,
                "ictd": value,
                "inertia": fit.inertia,
            });
            write_json(out.join("ictd.json"), &report)?;
        }
        Analysis::Apl => {
            let value = apl(s.model.embedder(), &s.data)?;
            write_json(out.join("apl.json"), &serde_json::json!({ "apl": value, "n_trajectories": s.data.len() }))?;
        }
        Analysis::Track { run_id, k, space } => {
            let idx = run_indices(&s.data, &run_id);
            if idx.is_empty() {
                return Err(Error::InvalidArgument(format!("no trajectories for run {run_id:?}")));
            }
            let k = k.unwrap_or(s.cfg.analysis.k);
            let all = points(&s.embeddings()?, space)?;
            let fit = kmeans(&all, k, seed)?;
            let track = track_run(&all.select(ndarray::Axis(0), &idx), &fit.centroids)?;
            let steps: Vec<u64> = idx.iter().map(|&i| s.data.trajectories[i].train_step).collect();
            let report = serde_json::json!({
                "run_id": run_id,
                "k": k,
                "trajectories": idx,
                "train_steps": steps,
                "labels": track.labels,
                "changepoints": track.changepoints,
            });
            write_json(out.join("track.json"), &report)?;
        }
        Analysis::Project { k, space } => {
            let table = s.embeddings()?;
            let pts = points(&table, space)?;
            let proj = pca_project(&pts)?;
            let mut csv = String::from("traj_id,pc1,pc2\n");
            for (row, id) in table.traj_ids.iter().enumerate() {
                csv.push_str(&format!("{id},{},{}\n", proj.coords[[row, 0]], proj.coords[[row, 1]]));
            }
            write_file(out.join("projection.csv"), csv)?;
            let labels = k.map(|k| kmeans(&pts, k, seed)).transpose()?.map(|f| f.labels);
            scatter_png(&proj.coords, labels.as_deref(), PNG_SIZE, out.join("projection.png"))?;
        }
    }
    Ok(())
}

fn concepts(
    args: &AnalyzeArgs,
    target: Target,
    m: Option<usize>,
    kappa: Option<f64>,
    method: Option<ShapMethodArg>,
    n_perms: Option<usize>,
) -> Result<()> {
    let s = Session::open(args)?;
    let mut cc = s.cfg.concepts.clone();
    if let Some(m) = m {
        cc.n_concepts = m;
    }
    if kappa.is_some() {
        cc.kappa = kappa;
    }
    if let Some(method) = method {
        cc.method = match method {
            ShapMethodArg::Exact => ShapMethod::Exact,
            ShapMethodArg::Sampled => ShapMethod::Sampled,
        };
    }
    if let Some(n) = n_perms {
        cc.n_perms = n;
    }
    cc.head.n_classes = s.cfg.analysis.n_classes;
    let (target, values) = match target {
        Target::Dispersion => (ConceptTarget::Dispersion, dispersions(&s.data)),
        Target::Return => (ConceptTarget::Return, total_returns(&s.data)?),
    };
    let table = s.embeddings()?;
    let report = analyze_concepts(&table.z_omega, &values, target, &cc)?;
    write_json(args.out.join("concepts.json"), &report)?;

    let halfwidth = s.cfg.corpus.env().arena_halfwidth();
    for class in &report.classes {
        let trajs: Vec<_> = class.nearest_trajectories.iter().map(|&i| &s.data.trajectories[i]).collect();
        trajectories_png(
            &trajs,
            s.data.meta.n_agents,
            halfwidth,
            PNG_SIZE,
            args.out.join(format!("concept_class{}.png", class.class)),
        )?;
    }
    Ok(())
}

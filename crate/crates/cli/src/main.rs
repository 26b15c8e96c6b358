//! `mohba`: generate corpora, train models, and analyze behavior spaces.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mohba", version, about = "Hierarchical latent analysis of multiagent trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scripted trajectory corpus.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Threads used for run generation; output is identical for any value.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train the hierarchical model.
    Train(TrainArgs),
    /// Train a comparison model.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Post-hoc analysis of a trained model.
    Analyze {
        #[command(flatten)]
        common: AnalyzeArgs,
        #[command(subcommand)]
        action: Analysis,
    },
    /// Concept discovery over the joint latent space.
    Concepts {
        #[command(flatten)]
        common: AnalyzeArgs,
        #[arg(long, value_enum)]
        target: Target,
        /// Number of concepts.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<ShapMethodArg>,
        #[arg(long)]
        n_perms: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint that holds optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides the configured number of steps.
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Analysis {
    /// Write per-trajectory embeddings.
    Embed {
        /// Draw one posterior sample per trajectory instead of the means.
        #[arg(long)]
        sample_seed: Option<u64>,
    },
    /// K-means over an embedding space.
    Cluster {
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Intra-cluster trajectory distance.
    Ictd {
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Action-prediction loss.
    Apl,
    /// Nearest-cluster labels and changepoints along one run.
    Track {
        #[arg(long)]
        run_id: String,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// 2-D PCA projection (CSV and PNG).
    Project {
        /// Color points by a K-means labeling with this many clusters.
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        space: SpaceArgs,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct SpaceArgs {
    #[arg(long, value_enum, default_value_t = Space::Omega)]
    space: Space,
    /// Agent whose local latent is used (all agents concatenated if absent).
    #[arg(long)]
    agent: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Space {
    Omega,
    Alpha,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Lstm,
    Vae,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    Dispersion,
    Return,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ShapMethodArg {
    Exact,
    Sampled,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

//! `facefield` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// The command ran and failed; exit code 1.
    Op(String),
}

impl From<facefield::Error> for CliError {
    fn from(e: facefield::Error) -> Self {
        CliError::Op(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "facefield", version, about = "Morphable facial radiance field toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic multi-view face corpus.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train a field on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Render one image from a checkpoint.
    Render(RenderArgs),
    /// Recover codes for a single image by latent optimization.
    Fit(FitArgs),
    /// Render morph sequences from the code bank.
    Morph(MorphArgs),
    /// Score renders against a dataset split.
    Eval(EvalArgs),
    /// Serve the HTTP API over a checkpoint.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetAction {
    /// Render a dataset to a directory.
    Build(DatasetArgs),
}

/// Options shared by every configurable command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML file layered between defaults and flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set field.width=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub expressions: Option<usize>,
    /// Number of rig views spread over the rig order.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shape_dim: Option<usize>,
    #[arg(long)]
    pub texture_size: Option<usize>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory; also receives metrics.ndjson and run.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Export a checkpoint every this many steps (0: only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Stop after this many steps in this invocation; the schedule still spans `--iters`.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from the checkpoint already in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct CameraArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub yaw: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub pitch: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Coarse samples only, for a faster preview.
    #[arg(long)]
    pub coarse_only: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub subject: Option<usize>,
    #[arg(long)]
    pub expression: Option<usize>,
    /// JSON file with explicit codes instead of a bank entry.
    #[arg(long, conflicts_with = "subject")]
    pub codes: Option<PathBuf>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long, default_value = "render.png")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// JSON array of `[row, col]` landmark positions.
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphMode {
    /// Blend two bank entries over the chosen code components.
    Interpolate,
    /// Render a, b and a with one component taken from b.
    Swap,
    /// Expression keyframes while the camera sweeps in yaw.
    Track,
}

#[derive(Args, Debug)]
pub struct MorphArgs {
    pub mode: MorphMode,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub from: Option<usize>,
    #[arg(long)]
    pub to: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated code components: shape, appearance, expression.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<String>>,
    /// Comma-separated expression labels for `track`.
    #[arg(long, value_delimiter = ',')]
    pub keys: Option<Vec<usize>>,
    #[arg(long, allow_hyphen_values = true)]
    pub yaw_end: Option<f64>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Dataset directory; defaults to the one recorded by `train`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub coarse_only: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 1)]
    pub fit_workers: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(format!("{}LOG", config::ENV_PREFIX), "info")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::Dataset { action: DatasetAction::Build(a) } => commands::dataset_build(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Render(a) => commands::render(a, &argv),
        Command::Fit(a) => commands::fit(a, &argv),
        Command::Morph(a) => commands::morph(a, &argv),
        Command::Eval(a) => commands::eval(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Op(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

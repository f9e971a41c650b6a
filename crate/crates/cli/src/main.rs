//! `ccsi`: generate channels, chart them, train, subsample and evaluate.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccsi", version, about = "Channel-charting CSI compression pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labelled channel dataset.
    Generate(GenerateArgs),
    /// Build the ISOMAP chart of the calibration split.
    Chart(ChartArgs),
    /// Initialize a model from a chart and train it.
    Train(TrainArgs),
    /// Reduce a checkpoint's calibration set by similarity subsampling.
    Subsample(SubsampleArgs),
    /// Export single-user and sum-rate metrics on the test split.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset path; `.json` selects the JSON mirror.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `scene.rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ChartArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Chart path; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `chart.neighbors`.
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Overrides `chart.dim`.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub chart: PathBuf,
    /// Best-validation checkpoint; `.json` selects the JSON mirror.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV. Defaults to the checkpoint path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Writes `<stem>-epoch<NNNN>.cckp` here after every epoch.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Keeps the calibration set fixed during training.
    #[arg(long)]
    pub freeze_encoder: bool,
    /// Subsamples the calibration set to this many columns before training.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Overrides `train.rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `subsample.keep_count`.
    #[arg(long)]
    pub keep: Option<usize>,
    /// Overrides `subsample.rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Uses the true normalized channel as precoder instead of the model.
    #[arg(long)]
    pub oracle: bool,
    /// Overrides `eval.users`.
    #[arg(long)]
    pub users: Option<usize>,
    /// Overrides `eval.group_seed`.
    #[arg(long)]
    pub group_seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Chart(a) => commands::chart(&a),
        Command::Train(a) => commands::train(&a),
        Command::Subsample(a) => commands::subsample(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

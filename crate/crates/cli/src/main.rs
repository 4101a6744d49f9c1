//! `intentkit`: command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical abort.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "intentkit", version, about = "Pose and emotion intent detection toolkit")]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with the command's configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path (file, or stdout when omitted where supported).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a procedural dataset.
    Synth(SynthArgs),
    /// Train the recurrent VAE and write its checkpoint and loss log.
    TrainRvae(TrainRvaeArgs),
    /// Sample labeled sequences from a trained VAE.
    Generate(GenerateArgs),
    /// Append synthetic positive windows up to a target ratio.
    Rebalance(RebalanceArgs),
    /// Train a window classifier.
    Train(TrainArgs),
    /// Cross-subject or cross-scene comparison of classifier variants.
    Evaluate(EvaluateArgs),
    /// Precision and recall over a threshold grid.
    Sweep(SweepArgs),
    /// Probability trajectories aligned to the intent onset.
    Trajectories(TrajectoriesArgs),
    /// Real-vs-synthetic discriminative score of a trained VAE.
    Realism(RealismArgs),
    /// Score adapter JSONL from stdin, one JSON line per frame on stdout.
    Stream(StreamArgs),
    /// Stream a dataset file through the engine.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value = "standard")]
    pub preset: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Target fraction of sequences with intent.
    #[arg(long)]
    pub intent_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainRvaeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Frames per sequence; defaults to the model's window.
    #[arg(long)]
    pub len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RebalanceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub target: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation data for checkpoint selection and early stopping.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Trained VAE checkpoint used to rebalance the training data.
    #[arg(long)]
    pub rebalance_model: Option<PathBuf>,
    #[arg(long)]
    pub rebalance_target: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "cross_subject")]
    pub protocol: String,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated backbones.
    #[arg(long, default_value = "gru,lstm,transformer")]
    pub backbones: String,
    /// Comma-separated feature sets.
    #[arg(long, default_value = "fused")]
    pub features: String,
    /// Also evaluate every variant with VAE rebalancing to this ratio.
    #[arg(long)]
    pub rebalance: Option<f64>,
    /// Comma-separated seeds; defaults to the global seed.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub rvae_epochs: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `frame` or `sequence`.
    #[arg(long, default_value = "sequence")]
    pub level: String,
    #[arg(long, default_value = "model")]
    pub variant: String,
}

#[derive(Args, Debug)]
pub struct TrajectoriesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub horizon: usize,
    #[arg(long, default_value = "model")]
    pub variant: String,
}

#[derive(Args, Debug)]
pub struct RealismArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Real sequences to compare against.
    #[arg(long)]
    pub data: PathBuf,
    /// Stride between real windows.
    #[arg(long, default_value_t = 15)]
    pub stride: usize,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Print latency statistics as JSON on stdout.
    #[arg(long)]
    pub stats: bool,
    #[arg(long)]
    pub threshold: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<intentkit::Error>().map_or(2, intentkit::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

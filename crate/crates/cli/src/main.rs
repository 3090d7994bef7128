mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skelfall_core::Error;

/// Skeleton-based fall detection: data preparation, training, evaluation.
#[derive(Debug, Parser)]
#[command(name = "skelfall", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic synthetic corpus of .skeleton files
    Synth(SynthArgs),
    /// Train a network and write checkpoints plus a JSON-lines history
    Train(RunArgs),
    /// Evaluate a checkpoint on the test side of a split
    Eval(EvalArgs),
    /// Evaluate a checkpoint on another dataset with no parameter updates
    TransferEval(EvalArgs),
    /// Report parameter count, FLOPs and timings
    Profile(ProfileArgs),
    /// Summarize a .skeleton file
    Inspect(InspectArgs),
}

/// Flags shared by commands that read an experiment configuration.
#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    /// Experiment configuration file (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of .skeleton files
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Evaluation protocol: xsub60, xview60, xsub120, xset120, uwa_val3, uwa_val4
    #[arg(long)]
    pub split: Option<String>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Window length in frames
    #[arg(long)]
    pub window: Option<usize>,
    /// Hop limit of the adjacency
    #[arg(long)]
    pub hops: Option<usize>,
    /// Skeleton topology edge-list file
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of fall samples
    #[arg(long)]
    pub n_fall: Option<usize>,
    /// Number of non-fall samples
    #[arg(long)]
    pub n_other: Option<usize>,
    /// Frames per sample
    #[arg(long)]
    pub frames: Option<usize>,
    /// Gaussian joint noise in meters
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory for checkpoints, history and the effective config
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of .skeleton files
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Evaluation protocol
    #[arg(long)]
    pub split: String,
    /// Report file (JSON); a text rendering is written next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Window length in frames (defaults to the checkpoint's)
    #[arg(long)]
    pub window: Option<usize>,
    /// Skeleton topology of the evaluation data
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Fall class id of the evaluation data (defaults to the split's dataset)
    #[arg(long)]
    pub fall_class: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Profile a trained checkpoint
    #[arg(long, conflicts_with = "config")]
    pub checkpoint: Option<PathBuf>,
    /// Profile a freshly initialized network from a config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Window length in frames
    #[arg(long)]
    pub window: Option<usize>,
    /// Timed forward passes
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Training-set size used for the minutes-per-epoch estimate
    #[arg(long, default_value_t = 40_091)]
    pub epoch_samples: usize,
    /// Profile file (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A .skeleton file
    pub file: PathBuf,
}

/// Process exit code for each error class.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        Error::Format { .. } => 5,
        Error::TopologyMismatch(_) => 6,
        Error::Checkpoint(_) => 7,
        Error::Training(_) => 8,
        Error::Label(_) => 9,
        Error::Parameter(_) => 10,
        Error::Dimension(_) => 11,
        Error::Topology(_) => 12,
        Error::EmptySample(_) => 13,
        Error::UndefinedMetric(_) => 14,
    }
}

const USAGE_EXIT: u8 = 2;

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("SKELFALL_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("SKELFALL_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(USAGE_EXIT);
        }
    };
    let result = init_threads().and_then(|_| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}

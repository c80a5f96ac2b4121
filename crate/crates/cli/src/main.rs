use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

#[derive(Debug, Parser)]
#[command(name = "boffin", version, about = "Bayesian optimization of speaker-adaptation hyperparameters")]
pub struct Cli {
    /// Run seed; every random choice derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory (manifest path for `mix-corpus`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Search space: a JSON file or `boffin-preset`.
    #[arg(long, global = true)]
    pub space: Option<String>,

    /// Objective: branin, hartmann6, sphere, surrogate or external.
    #[arg(long, global = true)]
    pub objective: Option<String>,

    /// JSON file with defaults for any of the flags above and below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress at info level (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one tuning strategy against an objective.
    Tune(TuneArgs),
    /// Same as `tune --strategy rs`.
    RandomSearch(TuneArgs),
    /// Same as `tune --strategy baseline`.
    Baseline(TuneArgs),
    /// Compare strategies over a family of synthetic speakers.
    Benchmark(BenchmarkArgs),
    /// Mix base-speaker utterances into a target manifest.
    MixCorpus(MixArgs),
    /// Split a manifest into training and validation parts.
    Split(SplitArgs),
}

#[derive(Debug, Args, Default)]
pub struct ObjectiveArgs {
    /// Speaker seed for the surrogate objective.
    #[arg(long)]
    pub speaker: Option<u64>,

    /// JSON file describing the surrogate family.
    #[arg(long)]
    pub family: Option<PathBuf>,

    /// Shell command for the external objective.
    #[arg(long)]
    pub command: Option<String>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// bo, rs or baseline.
    #[arg(long)]
    pub strategy: Option<String>,

    /// Total number of evaluations.
    #[arg(long)]
    pub budget: Option<usize>,

    /// Random initial trials before the surrogate takes over.
    #[arg(long)]
    pub n_init: Option<usize>,

    /// Configuration JSON for the baseline strategy, or `boffin-preset`.
    #[arg(long)]
    pub baseline_config: Option<String>,

    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<String>>,

    /// Number of synthetic speakers.
    #[arg(long)]
    pub speakers: Option<usize>,

    /// Number of seeds per speaker.
    #[arg(long)]
    pub seeds: Option<usize>,

    #[arg(long)]
    pub budget: Option<usize>,

    #[arg(long)]
    pub n_init: Option<usize>,

    /// Configuration JSON for the baseline strategy, or `boffin-preset`.
    #[arg(long)]
    pub baseline_config: Option<String>,

    /// JSON file describing the surrogate family.
    #[arg(long)]
    pub family: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Target-speaker manifest.
    #[arg(long)]
    pub target: PathBuf,

    /// Base-speaker manifest.
    #[arg(long)]
    pub base: PathBuf,

    /// Fraction of base utterances in the output, in [0, 1).
    #[arg(long)]
    pub ratio: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,

    /// Fraction held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Command-line front end: dataset generation, baseline tuning,
//! meta-training, evaluation and streaming inference.
//!
//! Every command resolves a [`config::RunConfig`] (task defaults, then the
//! `--config` file, then flags) and writes it into its output directory.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use afkit::scenes::Fold;
use afkit::tasks::TaskKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{OptimizerChoice, Overrides};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "afkit", version, about = "Frequency-domain adaptive filters with learned optimizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: manifest.json plus per-scene WAVs.
    Datagen(DatagenArgs),
    /// Grid-search a classical optimizer on the validation fold.
    Tune(TuneArgs),
    /// Meta-train the learned optimizer.
    Train(TrainArgs),
    /// Score an optimizer on a dataset fold.
    Eval(EvalArgs),
    /// Process one recording in a single streaming pass.
    Infer(InferArgs),
}

/// Flags shared by every subcommand. They override the config file.
#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sysid, aec, eq, wpe or gsc.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// lms, nlms, rmsprop, rls or meta.
    #[arg(long)]
    pub optimizer: Option<OptimizerChoice>,
    /// Output directory.
    #[arg(long = "out")]
    pub out: Option<PathBuf>,
    /// Learned optimizer checkpoint (eval, infer) or where train keeps its
    /// latest state.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for scene-level parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: afkit::Error| e.to_string())
}

fn parse_fold(s: &str) -> Result<Fold, String> {
    match s {
        "train" => Ok(Fold::Train),
        "val" => Ok(Fold::Val),
        "test" => Ok(Fold::Test),
        other => Err(format!("unknown fold '{other}' (train, val, test)")),
    }
}

impl CommonArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            task: self.task,
            optimizer: self.optimizer,
            output_dir: self.out.clone(),
            checkpoint: self.checkpoint.clone(),
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Scenes per fold, replacing the configured counts.
    #[arg(long)]
    pub count: Option<usize>,
    /// Write only the manifest; scenes are rebuilt from their seeds.
    #[arg(long)]
    pub no_wav: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a saved checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Epoch limit, counted from the start of training.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_fold)]
    pub fold: Fold,
    /// Classical optimizer settings, e.g. best_config.json from tune.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Write the processed signal of every scene.
    #[arg(long)]
    pub emit_wav: bool,
    /// Write per-frame metric series.
    #[arg(long)]
    pub series: bool,
    /// Write the final beam pattern at this frequency (beamforming only).
    #[arg(long)]
    pub beampattern: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Filter input (far end, distorted signal or microphone array).
    #[arg(long)]
    pub input: PathBuf,
    /// Desired signal; defaults to the input for dereverberation and
    /// beamforming.
    #[arg(long)]
    pub desired: Option<PathBuf>,
    /// Clean target image per mic, needed by beamforming.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Datagen(a) => commands::cmd_datagen(&a).map(|_| ()),
        Command::Tune(a) => commands::cmd_tune(&a).map(|_| ()),
        Command::Train(a) => commands::cmd_train(&a).map(|_| ()),
        Command::Eval(a) => commands::cmd_eval(&a).map(|_| ()),
        Command::Infer(a) => commands::cmd_infer(&a).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    run(cli)
}

//! `tsg`: split, train, predict, evaluate, grid-search and benchmark semi-supervised
//! kernel SVMs trained with triply stochastic gradients.
//!
//! Exit codes: 0 success, 2 usage, 3 parse, 4 config, 5 divergence, 6 resource.
//! Every failure prints one line `error: <kind>: <message>` to stderr.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tsg", version, about = "Semi-supervised kernel SVMs with triply stochastic gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a labeled LIBSVM file into labeled, unlabeled and hidden-label files.
    Split(SplitArgs),
    /// Train a model and write it with a run manifest.
    Train(TrainArgs),
    /// Score a LIBSVM file with a trained model.
    Predict(PredictArgs),
    /// Error rate of a model on a labeled LIBSVM file.
    Eval(EvalArgs),
    /// 7×7 (C, σ) grid with unlabeled k-fold CV, then an η scan.
    Gridsearch(GridArgs),
    /// Wall time against T at fixed m and against training size.
    Bench(BenchArgs),
    /// Write a synthetic labeled LIBSVM file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Tsg,
    Frs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Gaussians,
    Separable,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Labeled LIBSVM file to split.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of points that keep their labels.
    #[arg(long)]
    pub n_labeled: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip min-max scaling.
    #[arg(long)]
    pub no_scale: bool,
}

/// Hyperparameters shared by training and grid search.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Unlabeled loss: shg, sshg, ramp[:s] or da.
    #[arg(long, default_value = "shg")]
    pub loss: String,
    /// Use the literal derivative convention for the symmetric hinges.
    #[arg(long)]
    pub literal_derivatives: bool,
    #[arg(long = "batch-labeled", default_value_t = tsg_core::trainer::DEFAULT_BATCH)]
    pub batch_labeled: usize,
    #[arg(long = "batch-unlabeled", default_value_t = tsg_core::trainer::DEFAULT_BATCH)]
    pub batch_unlabeled: usize,
    /// Passes over the unlabeled pool (default 1 for TSG, 10 for FRS).
    #[arg(long)]
    pub passes: Option<f64>,
    /// Random features per iteration (TSG) or in total (FRS); default ⌈√n⌉.
    #[arg(long)]
    pub m: Option<usize>,
    /// Seed of the random features.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of instance sampling.
    #[arg(long = "data-seed", default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub labeled: PathBuf,
    /// Unlabeled pool; labels in this file are ignored.
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Output model path.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Tsg)]
    pub method: Method,
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// Unlabeled weight; default C·n_l/n_u.
    #[arg(long = "Cstar")]
    pub c_star: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Constant step γ = 1/η.
    #[arg(long, conflicts_with = "theta")]
    pub eta: Option<f64>,
    /// Step γ = θ/T^{3/4}.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Iterations; overrides --passes.
    #[arg(long = "T")]
    pub t: Option<usize>,
    #[command(flatten)]
    pub model_args: ModelArgs,
    /// Write the per-iteration diagnostic series (CSV) here and a JSON summary next to it.
    #[arg(long)]
    pub diagnose: Option<PathBuf>,
    /// Probe points for the diagnostic gap estimate.
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    /// Gradient Lipschitz estimate enabling the absolute gradient-norm check.
    #[arg(long)]
    pub lipschitz: Option<f64>,
    /// Split manifest whose path is recorded in the run manifest.
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Apply the scaler stored in this split manifest to the input.
    #[arg(long)]
    pub scaler: Option<PathBuf>,
    /// Output file for `label score` lines; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled LIBSVM file, e.g. the hidden labels written by `split`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub scaler: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub labeled: PathBuf,
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Labels of the unlabeled pool, in the same order, used only for CV scoring.
    #[arg(long)]
    pub hidden: PathBuf,
    #[command(flatten)]
    pub model_args: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long = "fold-seed", default_value_t = 0)]
    pub fold_seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Iteration counts for the T sweep, comma separated.
    #[arg(long = "T", value_delimiter = ',')]
    pub t: Vec<usize>,
    /// Training sizes for the n sweep, comma separated.
    #[arg(long = "n", value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Fixed features per iteration; default ⌈√n⌉.
    #[arg(long)]
    pub m: Option<usize>,
    /// Pool size used by the T sweep.
    #[arg(long = "pool", default_value_t = 1000)]
    pub pool: usize,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long = "batch", default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Split(a) => commands::split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gridsearch(a) => commands::gridsearch(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Synth(a) => commands::synth(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is misuse.
            if e.use_stderr() {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("invalid arguments");
                eprintln!("{}", CliError::usage(first.trim_start_matches("error: ")));
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}

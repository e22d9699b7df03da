//! `rvl`: analyze room impulse responses, build reverberant datasets, train
//! and evaluate blind acoustic parameter estimators.
//!
//! Exit status: 0 success, 2 invalid configuration or usage, 3 invalid or
//! missing input data, 4 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rvl_core::dataset::DatasetError;
use rvl_core::eval::EvalError;
use rvl_core::nn::ModelError;

#[derive(Debug, Parser)]
#[command(name = "rvl", version, about = "Blind room acoustic parameter estimation toolkit")]
struct Cli {
    /// Worker threads (default: config file, then $RVL_THREADS, then 1).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with [build], [train] and [eval] sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-band and broadband RT60, C50, C80 and DRR of RIR files.
    Analyze(AnalyzeArgs),
    /// Synthesize a reverberant, noisy feature dataset.
    Build(BuildArgs),
    /// Train an estimator on a built dataset.
    Train(TrainArgs),
    /// Evaluate a model on a dataset's test split.
    Eval(EvalArgs),
    /// Combine report.json files into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// WAV files or directories of WAV files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Analysis records, one JSON object per line.
    #[arg(long, default_value = "rir_analysis.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Directory of source audio (a `music` path component marks music).
    #[arg(long)]
    pub audio: PathBuf,
    /// Directory of RIR WAV files.
    #[arg(long)]
    pub rirs: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// SNR list in dB [default: 15,10,5,0].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub snr: Option<Vec<f64>>,
    /// Chunk length in seconds [default: 8].
    #[arg(long)]
    pub chunk_s: Option<f64>,
    /// Same-split RIRs per chunk, 0 for all [default: 4].
    #[arg(long)]
    pub rirs_per_chunk: Option<usize>,
    /// [default: 0.8]
    #[arg(long)]
    pub audio_train_ratio: Option<f64>,
    /// [default: 0.8]
    #[arg(long)]
    pub rir_train_ratio: Option<f64>,
    /// Exact train,test RIR counts; overrides the RIR ratio.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub rir_counts: Option<Vec<usize>>,
    /// Balance training RT60 over this many bins in [0, 4] s, 0 for off [default: 0].
    #[arg(long)]
    pub balance_bins: Option<usize>,
    /// Examples per shard file [default: 1024].
    #[arg(long)]
    pub shard_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// baseline, crnn1 or crnn2 [default: crnn2].
    #[arg(long)]
    pub arch: Option<String>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Training history [default: history.json next to the model].
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 15]
    #[arg(long)]
    pub patience: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// [default: 0.1]
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Store the Adam moments in the model file.
    #[arg(long)]
    pub keep_optimizer_state: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for report.txt, report.json and scatter.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Also report metrics on the training split.
    #[arg(long)]
    pub train_metrics: bool,
    /// Test hook: predict the stored targets instead of running a model.
    #[arg(long, hide = true)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files or directories containing one.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the training-split metrics.
    #[arg(long)]
    pub train: bool,
}

/// Failure classes, mapped to distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CliError::Config(e) | CliError::Data(e) | CliError::Runtime(e) => e,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Config(_) => CliError::Config(e.into()),
            _ => CliError::Data(e.into()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Spec(_) => CliError::Config(e.into()),
            ModelError::NonFinite(_) => CliError::Runtime(e.into()),
            _ => CliError::Data(e.into()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Dataset(d) => d.into(),
            EvalError::Output { .. } | EvalError::Estimator { .. } => CliError::Runtime(e.into()),
            _ => CliError::Data(e.into()),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = config::load(cli.config.as_deref())?;
    let threads = config::resolve_threads(cli.threads, &file)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.into()))?;
    match cli.command {
        Command::Analyze(a) => commands::analyze(a, threads),
        Command::Build(a) => commands::build(a, &file, threads),
        Command::Train(a) => commands::train(a, &file, threads),
        Command::Eval(a) => commands::eval(a, &file, threads),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            ExitCode::from(e.code())
        }
    }
}

//! TOML run configuration and flag > file > default resolution.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rvl_core::dataset::{BuildConfig, PairingPolicy, SplitConfig};
use rvl_core::nn::{Architecture, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default worker threads when neither flag nor config file sets them.
pub const THREADS_ENV: &str = "RVL_THREADS";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub build: BuildSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub snr_db: Option<Vec<f64>>,
    pub chunk_s: Option<f64>,
    /// 0 pairs every chunk with every RIR of its split.
    pub rirs_per_chunk: Option<usize>,
    pub audio_train_ratio: Option<f64>,
    pub rir_train_ratio: Option<f64>,
    pub rir_counts: Option<[usize; 2]>,
    /// 0 disables balancing.
    pub balance_bins: Option<usize>,
    pub shard_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub arch: Option<String>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub keep_optimizer_state: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub train_metrics: Option<bool>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(CliError::Config)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(CliError::Config)
}

/// First of flag, file value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn resolve_threads(flag: Option<usize>, file: &FileConfig) -> Result<usize, CliError> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(anyhow::anyhow!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        Err(_) => None,
    };
    let n = flag.or(file.threads).or(env).unwrap_or(1);
    if n == 0 {
        return Err(CliError::Config(anyhow::anyhow!("thread count must be at least 1")));
    }
    Ok(n)
}

#[derive(Debug, Serialize)]
pub struct AnalyzeRun {
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct BuildRun {
    pub threads: usize,
    pub seed: u64,
    pub audio_dir: PathBuf,
    pub rir_dir: PathBuf,
    pub out_dir: PathBuf,
    pub split: SplitConfig,
    pub pairing: PairingPolicy,
    pub balance_bins: Option<usize>,
    pub dataset: BuildConfig,
}

#[derive(Debug, Serialize)]
pub struct TrainRun {
    pub threads: usize,
    pub dataset_dir: PathBuf,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Serialize)]
pub struct EvalRun {
    pub threads: usize,
    pub model_path: Option<PathBuf>,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub train_metrics: bool,
    pub oracle: bool,
}

pub fn parse_arch(s: &str) -> Result<Architecture, CliError> {
    s.parse().map_err(|e: String| CliError::Config(anyhow::anyhow!(e)))
}

/// Writes a resolved run configuration as pretty JSON.
pub fn persist<T: Serialize>(path: &Path, run: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(CliError::Runtime)?;
    }
    let mut body = serde_json::to_string_pretty(run).expect("run configs serialize");
    body.push('\n');
    std::fs::write(path, body)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Runtime)
}

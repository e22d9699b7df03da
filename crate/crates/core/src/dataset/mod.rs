//! Corpus manifests, seeded splits, RT60 balancing, example synthesis and
//! the on-disk dataset layout.
//!
//! ```text
//! out/
//!   manifest.json        audio and RIR entries with splits and parameters
//!   rir_analysis.jsonl   one analysis record per RIR file, rejects included
//!   dataset.json         build settings and counts
//!   index.jsonl          one record per example: shard, offset, metadata, targets
//!   shards/NNN.rvlf      concatenated RVLF feature blobs
//! ```

mod build;
mod store;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::rir::{analyze, validate, AcousticParams, AnalysisError, Validation, MAX_RT60_S};
use crate::signal::{load_audio, trim_to_onset, SignalError};
use crate::util::{derive_seed, label_seed};

pub use build::{build_dataset, synthesize_example, BuildConfig, BuildSummary, Example, ExampleMeta, SynthesisInput};
pub use store::{
    read_manifest, read_rir_analysis, write_manifest, write_rir_analysis, Dataset, DatasetInfo, IndexRecord, Targets,
    INDEX_FILE, INFO_FILE, MANIFEST_FILE, RIR_ANALYSIS_FILE,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no WAV files found under {0}")]
    EmptyDirectory(PathBuf),
    #[error("every RIR was rejected ({} files); first reason: {}", .0.len(), .0.first().map(|r| r.reason.as_str()).unwrap_or("none"))]
    NoValidRirs(Vec<RejectedRir>),
    #[error("balancing into {bins} bins needs at least {bins} distinct training RT60 values, found {distinct}")]
    TooFewDistinct { distinct: usize, bins: usize },
    #[error("the audio x RIR x SNR cross-product is empty")]
    EmptyCrossProduct,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioKind {
    Speech,
    Music,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioEntry {
    pub audio_id: String,
    /// Relative to [`Manifest::audio_root`].
    pub path: String,
    pub kind: AudioKind,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirEntry {
    pub rir_id: String,
    /// Relative to [`Manifest::rir_root`].
    pub path: String,
    pub split: Split,
    /// Copy number introduced by balancing; 0 for the original entry.
    #[serde(default)]
    pub replica: u32,
    pub params: AcousticParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRir {
    pub rir_id: String,
    pub path: String,
    pub reason: String,
}

/// How many same-split RIRs each audio chunk is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPolicy {
    /// `None` pairs every chunk with every RIR of its split.
    pub rirs_per_chunk: Option<usize>,
}

impl Default for PairingPolicy {
    fn default() -> Self {
        Self {
            rirs_per_chunk: Some(4),
        }
    }
}

/// Train/test split settings. Exact RIR counts take precedence over the ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub audio_train_ratio: f64,
    pub rir_train_ratio: f64,
    pub rir_counts: Option<(usize, usize)>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            audio_train_ratio: 0.8,
            rir_train_ratio: 0.8,
            rir_counts: None,
        }
    }
}

impl SplitConfig {
    fn check(&self) -> Result<(), DatasetError> {
        for (name, r) in [
            ("audio_train_ratio", self.audio_train_ratio),
            ("rir_train_ratio", self.rir_train_ratio),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(DatasetError::Config(format!("{name} {r} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub audio_root: String,
    pub rir_root: String,
    pub split_config: SplitConfig,
    pub pairing: PairingPolicy,
    /// Set once [`balance`] has run.
    pub balance_bins: Option<usize>,
    pub audio: Vec<AudioEntry>,
    pub rirs: Vec<RirEntry>,
    pub rejected_rirs: Vec<RejectedRir>,
}

impl Manifest {
    pub fn audio_path(&self, e: &AudioEntry) -> PathBuf {
        Path::new(&self.audio_root).join(&e.path)
    }

    pub fn rir_path(&self, e: &RirEntry) -> PathBuf {
        Path::new(&self.rir_root).join(&e.path)
    }

    pub fn audio_in(&self, split: Split) -> impl Iterator<Item = &AudioEntry> {
        self.audio.iter().filter(move |e| e.split == split)
    }

    pub fn rirs_in(&self, split: Split) -> impl Iterator<Item = &RirEntry> {
        self.rirs.iter().filter(move |e| e.split == split)
    }

    /// Checks split hygiene: no id in both splits and every RIR accepted.
    pub fn check(&self) -> Result<(), DatasetError> {
        for (kind, ids) in [
            ("audio", self.audio.iter().map(|e| (&e.audio_id, e.split)).collect::<Vec<_>>()),
            ("rir", self.rirs.iter().map(|e| (&e.rir_id, e.split)).collect()),
        ] {
            let train: BTreeSet<_> = ids.iter().filter(|(_, s)| *s == Split::Train).map(|(id, _)| *id).collect();
            if let Some((id, _)) = ids.iter().find(|(id, s)| *s == Split::Test && train.contains(id)) {
                return Err(DatasetError::Format(format!("{kind} id {id} appears in both splits")));
            }
        }
        if let Some(e) = self.rirs.iter().find(|e| !validate(&e.params).is_accept()) {
            return Err(DatasetError::Format(format!("rir {} fails validation", e.rir_id)));
        }
        Ok(())
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Sorted WAV paths under `root`, relative to it, with `/` separators.
pub fn list_wavs(root: &Path) -> Result<Vec<String>, DatasetError> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) -> Result<(), DatasetError> {
        let entries = std::fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| DatasetError::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, root, out)?;
            } else if is_wav(&path) {
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
                out.push(parts.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    if out.is_empty() {
        return Err(DatasetError::EmptyDirectory(root.to_path_buf()));
    }
    Ok(out)
}

fn id_of(rel: &str) -> String {
    rel.rsplit_once('.').map_or(rel, |(stem, _)| stem).to_string()
}

fn kind_of(rel: &str) -> AudioKind {
    if rel.split('/').any(|c| c.eq_ignore_ascii_case("music")) {
        AudioKind::Music
    } else {
        AudioKind::Speech
    }
}

/// Seeded shuffle of `items`, then the first `n_train` go to train.
fn split_assign<T>(mut items: Vec<T>, n_train: usize, seed: u64) -> Vec<(T, Split)> {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    items
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, if i < n_train { Split::Train } else { Split::Test }))
        .collect()
}

fn ratio_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).round() as usize).min(n)
}

/// Analysis record of one RIR file, as cached in `rir_analysis.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirAnalysis {
    pub rir_id: String,
    pub path: String,
    pub accepted: bool,
    pub params: Option<AcousticParams>,
    pub error: Option<String>,
}

/// Loads, onset-trims and analyzes one RIR file.
pub fn analyze_rir_file(path: &Path) -> Result<AcousticParams, AnalysisError> {
    let h = trim_to_onset(&load_audio(path)?)?;
    Ok(analyze(&h)?.rounded())
}

/// Analyzes every RIR under `root` (in parallel, results in path order).
pub fn analyze_rir_dir(root: &Path) -> Result<Vec<RirAnalysis>, DatasetError> {
    let rels = list_wavs(root)?;
    Ok(rels
        .par_iter()
        .map(|rel| {
            let rir_id = id_of(rel);
            match analyze_rir_file(&root.join(rel)) {
                Ok(p) => {
                    let v = validate(&p);
                    RirAnalysis {
                        rir_id,
                        path: rel.clone(),
                        accepted: v.is_accept(),
                        error: match v {
                            Validation::Accept => None,
                            Validation::Reject(r) => Some(r),
                        },
                        params: Some(p),
                    }
                }
                Err(e) => RirAnalysis {
                    rir_id,
                    path: rel.clone(),
                    accepted: false,
                    params: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// Lists audio and RIRs, analyzes and screens the RIRs, and assigns seeded
/// train/test splits.
pub fn build_manifest(
    audio_root: &Path,
    rir_root: &Path,
    split: &SplitConfig,
    pairing: PairingPolicy,
    seed: u64,
) -> Result<(Manifest, Vec<RirAnalysis>), DatasetError> {
    split.check()?;
    let audio_rels = list_wavs(audio_root)?;
    let analyses = analyze_rir_dir(rir_root)?;

    let n_audio_train = ratio_count(audio_rels.len(), split.audio_train_ratio);
    let mut audio: Vec<AudioEntry> = split_assign(audio_rels, n_audio_train, derive_seed(seed, &[label_seed("audio-split")]))
        .into_iter()
        .map(|(rel, split)| AudioEntry {
            audio_id: id_of(&rel),
            kind: kind_of(&rel),
            path: rel,
            split,
        })
        .collect();
    audio.sort_by(|a, b| a.path.cmp(&b.path));

    let mut rejected = Vec::new();
    let mut valid = Vec::new();
    for a in &analyses {
        match (&a.params, a.accepted) {
            (Some(p), true) => valid.push((a.rir_id.clone(), a.path.clone(), p.clone())),
            _ => {
                let reason = a.error.clone().unwrap_or_default();
                log::warn!("excluding RIR {}: {reason}", a.path);
                rejected.push(RejectedRir {
                    rir_id: a.rir_id.clone(),
                    path: a.path.clone(),
                    reason,
                });
            }
        }
    }
    if valid.is_empty() {
        return Err(DatasetError::NoValidRirs(rejected));
    }
    let n_rir_train = match split.rir_counts {
        Some((train, test)) => {
            if train + test > valid.len() {
                return Err(DatasetError::Config(format!(
                    "requested {train} train + {test} test RIRs but only {} are valid",
                    valid.len()
                )));
            }
            valid.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[label_seed("rir-subset")])));
            valid.truncate(train + test);
            valid.sort_by(|a, b| a.1.cmp(&b.1));
            train
        }
        None => ratio_count(valid.len(), split.rir_train_ratio),
    };
    let mut rirs: Vec<RirEntry> = split_assign(valid, n_rir_train, derive_seed(seed, &[label_seed("rir-split")]))
        .into_iter()
        .map(|((rir_id, path, params), split)| RirEntry {
            rir_id,
            path,
            split,
            replica: 0,
            params,
        })
        .collect();
    rirs.sort_by(|a, b| a.path.cmp(&b.path));

    let manifest = Manifest {
        seed,
        audio_root: audio_root.to_string_lossy().into_owned(),
        rir_root: rir_root.to_string_lossy().into_owned(),
        split_config: split.clone(),
        pairing,
        balance_bins: None,
        audio,
        rirs,
        rejected_rirs: rejected,
    };
    manifest.check()?;
    Ok((manifest, analyses))
}

/// Bin of `rt60` among `n_bins` equal-width bins over `[0, 4]` s.
pub fn rt60_bin(rt60: f64, n_bins: usize) -> usize {
    ((rt60 / MAX_RT60_S * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1)
}

/// Training-split RT60 histogram.
pub fn rt60_histogram(m: &Manifest, n_bins: usize) -> Vec<usize> {
    let mut h = vec![0; n_bins];
    for e in m.rirs_in(Split::Train) {
        h[rt60_bin(e.params.rt60, n_bins)] += 1;
    }
    h
}

/// Resamples training RIRs so that non-empty RT60 bins hold between
/// `ceil(2t/3)` and `floor(4t/3)` entries, `t` being the median non-empty
/// bin count. Over-full bins are truncated (seeded subset), thin bins are
/// topped up with replicas. The max/min ratio over non-empty bins is then at
/// most 2. Test entries are untouched.
pub fn balance(m: &Manifest, n_bins: usize) -> Result<Manifest, DatasetError> {
    if n_bins == 0 {
        return Err(DatasetError::Config("balance needs at least one bin".into()));
    }
    let distinct: BTreeSet<u64> = m.rirs_in(Split::Train).map(|e| e.params.rt60.to_bits()).collect();
    if distinct.len() < n_bins {
        return Err(DatasetError::TooFewDistinct {
            distinct: distinct.len(),
            bins: n_bins,
        });
    }
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, e) in m.rirs.iter().enumerate() {
        if e.split == Split::Train {
            bins[rt60_bin(e.params.rt60, n_bins)].push(i);
        }
    }
    let mut counts: Vec<usize> = bins.iter().map(Vec::len).filter(|&c| c > 0).collect();
    counts.sort_unstable();
    let t = counts[(counts.len() - 1) / 2];
    let lo = (2 * t).div_ceil(3);
    let hi = (4 * t) / 3;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(m.seed, &[label_seed("balance")]));
    let mut keep = vec![true; m.rirs.len()];
    let mut replicas: Vec<RirEntry> = Vec::new();
    for members in bins.iter().filter(|b| !b.is_empty()) {
        if members.len() > hi {
            let kept: BTreeSet<usize> = members.choose_multiple(&mut rng, hi).copied().collect();
            for i in members {
                keep[*i] = kept.contains(i);
            }
        } else if members.len() < lo {
            let mut order = members.clone();
            order.shuffle(&mut rng);
            for j in 0..lo - members.len() {
                let mut e = m.rirs[order[j % order.len()]].clone();
                e.replica = (j / order.len()) as u32 + 1;
                replicas.push(e);
            }
        }
    }
    let mut out = m.clone();
    out.rirs = m
        .rirs
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(e, _)| e.clone())
        .chain(replicas)
        .collect();
    out.balance_bins = Some(n_bins);
    Ok(out)
}

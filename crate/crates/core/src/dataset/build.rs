use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::store::{write_json, DatasetInfo, IndexRecord, Targets, INDEX_FILE, INFO_FILE, MANIFEST_FILE};
use super::{DatasetError, Manifest, Split};
use crate::features::{write_rvlf, FeatureConfig, FeatureMatrix, Mfcc};
use crate::rir::AcousticParams;
use crate::signal::{add_noise_at_snr, chunk, convolve, load_audio, normalize_minmax, trim_to_onset, Signal};
use crate::util::{derive_seed, label_seed, sig9};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub snr_db: Vec<f64>,
    pub chunk_s: f64,
    pub features: FeatureConfig,
    pub shard_size: usize,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![15.0, 10.0, 5.0, 0.0],
            chunk_s: 8.0,
            features: FeatureConfig::default(),
            shard_size: 1024,
            seed: 0,
        }
    }
}

/// Provenance of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub id: String,
    pub split: Split,
    pub audio_id: String,
    pub chunk: usize,
    pub rir_id: String,
    #[serde(default)]
    pub rir_replica: u32,
    #[serde(serialize_with = "sig9::serialize")]
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureMatrix,
    /// `(rt60, c50, c80, drr)`
    pub targets: [f64; 4],
    pub meta: ExampleMeta,
}

/// Inputs of [`synthesize_example`] that are shared across SNRs.
pub struct SynthesisInput<'a> {
    pub chunk: &'a Signal,
    /// Onset-trimmed impulse response.
    pub rir: &'a Signal,
    pub params: &'a AcousticParams,
}

/// Reverberant, noisy features of one chunk:
/// normalize, convolve, truncate to the chunk length, normalize, add noise,
/// MFCC. Targets are the RIR's broadband parameters.
pub fn synthesize_example(
    input: &SynthesisInput,
    snr_db: f64,
    seed: u64,
    mfcc: &Mfcc,
) -> Result<(FeatureMatrix, [f64; 4]), DatasetError> {
    let dry = normalize_minmax(input.chunk);
    let wet = convolve(&dry, input.rir)?.truncated(input.chunk.len());
    let wet = normalize_minmax(&wet);
    let noisy = add_noise_at_snr(&wet, snr_db, seed)?;
    Ok((mfcc.compute(&noisy)?, input.params.targets()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub examples: BTreeMap<Split, usize>,
    pub shards: usize,
    pub frames: usize,
    pub coeffs: usize,
    /// Audio files that produced no chunk.
    pub skipped_audio: Vec<String>,
}

struct ShardWriter {
    dir: PathBuf,
    shard_size: usize,
    shard: usize,
    in_shard: usize,
    offset: u64,
    file: Option<BufWriter<File>>,
}

impl ShardWriter {
    fn path(&self, shard: usize) -> PathBuf {
        self.dir.join(shard_name(shard))
    }

    fn write(&mut self, m: &FeatureMatrix) -> Result<(u32, u64, u64), DatasetError> {
        if self.file.is_none() || self.in_shard == self.shard_size {
            if let Some(mut f) = self.file.take() {
                f.flush().map_err(|e| DatasetError::io(&self.path(self.shard), e))?;
                self.shard += 1;
            }
            let p = self.path(self.shard);
            self.file = Some(BufWriter::new(File::create(&p).map_err(|e| DatasetError::io(&p, e))?));
            self.in_shard = 0;
            self.offset = 0;
        }
        let f = self.file.as_mut().expect("opened above");
        let len = write_rvlf(m, f)? as u64;
        let at = self.offset;
        self.offset += len;
        self.in_shard += 1;
        Ok((self.shard as u32, at, len))
    }

    fn finish(mut self) -> Result<usize, DatasetError> {
        match self.file.take() {
            Some(mut f) => {
                f.flush().map_err(|e| DatasetError::io(&self.path(self.shard), e))?;
                Ok(self.shard + 1)
            }
            None => Ok(0),
        }
    }
}

pub(crate) fn shard_name(shard: usize) -> String {
    format!("{shard:03}.rvlf")
}

struct Job {
    chunk: usize,
    rir: usize,
    snr: usize,
}

const SEED_PAIR: &str = "pairing";
const SEED_NOISE: &str = "noise";

/// Synthesizes every (chunk, paired RIR, SNR) example of both splits and
/// writes shards, `index.jsonl`, `manifest.json` and `dataset.json` under
/// `out_dir`. Output is a deterministic function of the manifest and config;
/// synthesis runs on the ambient rayon pool with ordered collection.
pub fn build_dataset(m: &Manifest, cfg: &BuildConfig, out_dir: &Path) -> Result<BuildSummary, DatasetError> {
    m.check()?;
    if cfg.snr_db.is_empty() {
        return Err(DatasetError::Config("no SNR values given".into()));
    }
    if cfg.shard_size == 0 {
        return Err(DatasetError::Config("shard_size must be at least 1".into()));
    }
    let shard_dir = out_dir.join("shards");
    fs::create_dir_all(&shard_dir).map_err(|e| DatasetError::io(&shard_dir, e))?;
    let mfcc = Mfcc::new(cfg.features.clone());

    log::info!("loading {} RIRs", m.rirs.len());
    let rirs: Vec<Signal> = m
        .rirs
        .par_iter()
        .map(|e| Ok(trim_to_onset(&load_audio(m.rir_path(e))?)?))
        .collect::<Result<_, DatasetError>>()?;

    let mut writer = ShardWriter {
        dir: shard_dir,
        shard_size: cfg.shard_size,
        shard: 0,
        in_shard: 0,
        offset: 0,
        file: None,
    };
    let mut index = Vec::new();
    let mut counts = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut shape = None;
    let pair_seed = derive_seed(cfg.seed, &[label_seed(SEED_PAIR)]);
    let noise_seed = derive_seed(cfg.seed, &[label_seed(SEED_NOISE)]);

    for split in Split::ALL {
        let split_rirs: Vec<usize> = (0..m.rirs.len()).filter(|&i| m.rirs[i].split == split).collect();
        let mut n_split = 0usize;
        for (ai, entry) in m.audio.iter().enumerate().filter(|(_, e)| e.split == split) {
            if split_rirs.is_empty() {
                break;
            }
            let audio = load_audio(m.audio_path(entry))?;
            let chunks = chunk(&audio, cfg.chunk_s)?;
            if chunks.is_empty() {
                log::warn!("{}: shorter than one {} s chunk, skipped", entry.path, cfg.chunk_s);
                skipped.push(entry.audio_id.clone());
                continue;
            }
            let mut jobs = Vec::new();
            for ci in 0..chunks.len() {
                let chosen: Vec<usize> = match m.pairing.rirs_per_chunk {
                    Some(k) if k < split_rirs.len() => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(pair_seed, &[ai as u64, ci as u64]));
                        let mut picked: Vec<usize> = sample(&mut rng, split_rirs.len(), k)
                            .into_iter()
                            .map(|j| split_rirs[j])
                            .collect();
                        picked.sort_unstable();
                        picked
                    }
                    _ => split_rirs.clone(),
                };
                for &ri in &chosen {
                    for si in 0..cfg.snr_db.len() {
                        jobs.push(Job {
                            chunk: ci,
                            rir: ri,
                            snr: si,
                        });
                    }
                }
            }
            let results: Vec<(FeatureMatrix, [f64; 4], u64)> = jobs
                .par_iter()
                .map(|j| {
                    let seed = derive_seed(noise_seed, &[ai as u64, j.chunk as u64, j.rir as u64, j.snr as u64]);
                    let input = SynthesisInput {
                        chunk: &chunks[j.chunk],
                        rir: &rirs[j.rir],
                        params: &m.rirs[j.rir].params,
                    };
                    let (f, t) = synthesize_example(&input, cfg.snr_db[j.snr], seed, &mfcc)?;
                    Ok((f, t, seed))
                })
                .collect::<Result<_, DatasetError>>()?;
            for (job, (features, targets, seed)) in jobs.iter().zip(results) {
                shape.get_or_insert((features.rows, features.cols));
                let (shard, offset, length) = writer.write(&features)?;
                let rir = &m.rirs[job.rir];
                index.push(IndexRecord {
                    meta: ExampleMeta {
                        id: format!("{split}-{n_split:06}"),
                        split,
                        audio_id: entry.audio_id.clone(),
                        chunk: job.chunk,
                        rir_id: rir.rir_id.clone(),
                        rir_replica: rir.replica,
                        snr_db: cfg.snr_db[job.snr],
                        seed,
                    },
                    shard,
                    offset,
                    length,
                    targets: Targets::from(targets),
                });
                n_split += 1;
            }
            log::info!("{split}: {} done ({n_split} examples)", entry.path);
        }
        counts.insert(split, n_split);
    }
    let shards = writer.finish()?;
    if index.is_empty() {
        return Err(DatasetError::EmptyCrossProduct);
    }
    let (frames, coeffs) = shape.expect("at least one example");

    let index_path = out_dir.join(INDEX_FILE);
    let mut w = BufWriter::new(File::create(&index_path).map_err(|e| DatasetError::io(&index_path, e))?);
    for r in &index {
        serde_json::to_writer(&mut w, r).map_err(|e| DatasetError::json(&index_path, e))?;
        w.write_all(b"\n").map_err(|e| DatasetError::io(&index_path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(&index_path, e))?;

    write_json(&out_dir.join(MANIFEST_FILE), m)?;
    let summary = BuildSummary {
        examples: counts,
        shards,
        frames,
        coeffs,
        skipped_audio: skipped,
    };
    write_json(
        &out_dir.join(INFO_FILE),
        &DatasetInfo {
            build: cfg.clone(),
            summary: summary.clone(),
        },
    )?;
    Ok(summary)
}

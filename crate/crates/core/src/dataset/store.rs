use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::build::{shard_name, BuildConfig, BuildSummary, Example, ExampleMeta};
use super::{DatasetError, Manifest, RirAnalysis, Split};
use crate::features::{read_rvlf, FeatureMatrix};
use crate::util::sig9;

pub const INDEX_FILE: &str = "index.jsonl";
pub const INFO_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RIR_ANALYSIS_FILE: &str = "rir_analysis.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    #[serde(serialize_with = "sig9::serialize")]
    pub rt60: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub c50: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub c80: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub drr: f64,
}

impl From<[f64; 4]> for Targets {
    fn from(t: [f64; 4]) -> Self {
        Self {
            rt60: t[0],
            c50: t[1],
            c80: t[2],
            drr: t[3],
        }
    }
}

impl Targets {
    pub fn to_array(self) -> [f64; 4] {
        [self.rt60, self.c50, self.c80, self.drr]
    }
}

/// One line of `index.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    #[serde(flatten)]
    pub meta: ExampleMeta,
    pub shard: u32,
    pub offset: u64,
    pub length: u64,
    pub targets: Targets,
}

/// Contents of `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub build: BuildConfig,
    pub summary: BuildSummary,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| DatasetError::io(path, e))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| DatasetError::json(path, e))?;
    w.write_all(b"\n").map_err(|e| DatasetError::io(path, e))?;
    w.flush().map_err(|e| DatasetError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let f = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| DatasetError::json(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let f = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| DatasetError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| DatasetError::json(path, e))?);
        }
    }
    Ok(out)
}

/// Writes one analysis record per line.
pub fn write_rir_analysis(path: &Path, records: &[RirAnalysis]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| DatasetError::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| DatasetError::json(path, e))?;
        w.write_all(b"\n").map_err(|e| DatasetError::io(path, e))?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))
}

pub fn read_rir_analysis(path: &Path) -> Result<Vec<RirAnalysis>, DatasetError> {
    read_jsonl(path)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), DatasetError> {
    write_json(path, m)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    read_json(path)
}

/// A built dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub info: DatasetInfo,
    pub index: Vec<IndexRecord>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let info: DatasetInfo = read_json(&dir.join(INFO_FILE))?;
        let index: Vec<IndexRecord> = read_jsonl(&dir.join(INDEX_FILE))?;
        if index.len() != info.summary.examples.values().sum::<usize>() {
            return Err(DatasetError::Format(format!(
                "{} lists {} examples but {} describes {}",
                INDEX_FILE,
                index.len(),
                INFO_FILE,
                info.summary.examples.values().sum::<usize>()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            info,
            index,
        })
    }

    pub fn manifest(&self) -> Result<Manifest, DatasetError> {
        read_manifest(&self.dir.join(MANIFEST_FILE))
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &IndexRecord> {
        self.index.iter().filter(move |r| r.meta.split == split)
    }

    pub fn len(&self, split: Split) -> usize {
        self.records(split).count()
    }

    fn shard_path(&self, shard: u32) -> PathBuf {
        self.dir.join("shards").join(shard_name(shard as usize))
    }

    fn read_at(&self, file: &mut File, r: &IndexRecord) -> Result<FeatureMatrix, DatasetError> {
        let path = self.shard_path(r.shard);
        file.seek(SeekFrom::Start(r.offset)).map_err(|e| DatasetError::io(&path, e))?;
        let mut buf = vec![0u8; r.length as usize];
        file.read_exact(&mut buf).map_err(|e| DatasetError::io(&path, e))?;
        let m = read_rvlf(buf.as_slice())?;
        if (m.rows, m.cols) != (self.info.summary.frames, self.info.summary.coeffs) {
            return Err(DatasetError::Format(format!(
                "{}: example {} is {}x{}, expected {}x{}",
                path.display(),
                r.meta.id,
                m.rows,
                m.cols,
                self.info.summary.frames,
                self.info.summary.coeffs
            )));
        }
        Ok(m)
    }

    pub fn load(&self, r: &IndexRecord) -> Result<FeatureMatrix, DatasetError> {
        let path = self.shard_path(r.shard);
        let mut f = File::open(&path).map_err(|e| DatasetError::io(&path, e))?;
        self.read_at(&mut f, r)
    }

    /// Loads every example of `split` in index order.
    pub fn load_split(&self, split: Split) -> Result<Vec<Example>, DatasetError> {
        let mut open: Option<(u32, File)> = None;
        let mut out = Vec::new();
        for r in self.records(split) {
            if open.as_ref().is_none_or(|(s, _)| *s != r.shard) {
                let path = self.shard_path(r.shard);
                open = Some((r.shard, File::open(&path).map_err(|e| DatasetError::io(&path, e))?));
            }
            let (_, f) = open.as_mut().expect("opened above");
            out.push(Example {
                features: self.read_at(f, r)?,
                targets: r.targets.to_array(),
                meta: r.meta.clone(),
            });
        }
        Ok(out)
    }
}

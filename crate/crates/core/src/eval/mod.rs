//! Error metrics, per-SNR aggregation, paper-style tables and scatter export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Example, Split};
use crate::features::FeatureMatrix;
use crate::nn::{Model, ModelError};
use crate::PARAMETER_NAMES;

/// Truth magnitudes below this make a MAPE term undefined.
pub const NEAR_ZERO: f64 = 1e-9;

/// Window around 0 dB counted in [`ParamMetrics::near_zero_db`].
pub const NEAR_ZERO_DB: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot compute a metric over zero values")]
    Empty,
    #[error("{pred} predictions for {truth} truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("truth values at indices {indices:?} are within 1e-9 of zero; percentage error is undefined")]
    NearZeroTruth { indices: Vec<usize> },
    #[error("estimator returned {got} predictions for {expected} examples")]
    Estimator { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl EvalError {
    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<(), EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let indices: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].abs() < NEAR_ZERO).collect();
    if !indices.is_empty() {
        return Err(EvalError::NearZeroTruth { indices });
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).sum();
    Ok(100.0 * sum / pred.len() as f64)
}

/// Root mean square error, in the unit of the inputs.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Anything that maps examples to `(rt60, c50, c80, drr)` estimates.
pub trait Estimator: Sync {
    fn name(&self) -> String;
    fn estimate(&self, batch: &[&Example]) -> Result<Vec<[f64; 4]>, EvalError>;
}

impl Estimator for Model {
    fn name(&self) -> String {
        self.meta.spec.architecture.to_string()
    }

    fn estimate(&self, batch: &[&Example]) -> Result<Vec<[f64; 4]>, EvalError> {
        let xs: Vec<&FeatureMatrix> = batch.iter().map(|e| &e.features).collect();
        Ok(self.predict_batch(&xs)?)
    }
}

/// Predicts the stored targets.
pub struct OracleEstimator;

impl Estimator for OracleEstimator {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn estimate(&self, batch: &[&Example]) -> Result<Vec<[f64; 4]>, EvalError> {
        Ok(batch.iter().map(|e| e.targets).collect())
    }
}

/// Predicts a constant, normally the training-target mean.
pub struct ConstantEstimator(pub [f64; 4]);

impl ConstantEstimator {
    pub fn mean_of(examples: &[Example]) -> Self {
        let mut m = [0.0; 4];
        for e in examples {
            for (a, t) in m.iter_mut().zip(e.targets) {
                *a += t;
            }
        }
        Self(m.map(|a| a / examples.len().max(1) as f64))
    }
}

impl Estimator for ConstantEstimator {
    fn name(&self) -> String {
        "mean".into()
    }

    fn estimate(&self, batch: &[&Example]) -> Result<Vec<[f64; 4]>, EvalError> {
        Ok(vec![self.0; batch.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub snr_db: f64,
    pub truth: [f64; 4],
    pub prediction: [f64; 4],
}

/// Examples per estimator call.
pub const EVAL_BATCH: usize = 64;

/// Runs the estimator over `examples` (batches in parallel) and returns the
/// predictions sorted by example id.
pub fn predict_all(est: &dyn Estimator, examples: &[Example]) -> Result<Vec<Prediction>, EvalError> {
    let batches: Vec<Vec<Prediction>> = examples
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let refs: Vec<&Example> = chunk.iter().collect();
            let preds = est.estimate(&refs)?;
            if preds.len() != chunk.len() {
                return Err(EvalError::Estimator {
                    expected: chunk.len(),
                    got: preds.len(),
                });
            }
            Ok(chunk
                .iter()
                .zip(preds)
                .map(|(e, p)| Prediction {
                    example_id: e.meta.id.clone(),
                    snr_db: e.meta.snr_db,
                    truth: e.targets,
                    prediction: p,
                })
                .collect())
        })
        .collect::<Result<_, EvalError>>()?;
    let mut out: Vec<Prediction> = batches.into_iter().flatten().collect();
    out.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub parameter: String,
    /// Percent; `None` when some truth is too close to zero.
    pub mape: Option<f64>,
    /// Seconds for rt60, dB otherwise.
    pub rmse: f64,
    /// Examples whose MAPE term is undefined.
    pub mape_rejected: Vec<String>,
    /// Examples with `|truth| <= 1 dB` (for dB-valued parameters).
    pub near_zero_db: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub params: Vec<ParamMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrGroup {
    pub snr_db: f64,
    #[serde(flatten)]
    pub metrics: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub overall: GroupMetrics,
    /// Descending SNR, exactly the values present.
    pub per_snr: Vec<SnrGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub train: Option<SplitReport>,
    pub test: SplitReport,
}

pub fn group_metrics(preds: &[&Prediction]) -> Result<GroupMetrics, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut params = Vec::with_capacity(4);
    for (j, name) in PARAMETER_NAMES.iter().enumerate() {
        let p: Vec<f64> = preds.iter().map(|x| x.prediction[j]).collect();
        let t: Vec<f64> = preds.iter().map(|x| x.truth[j]).collect();
        let (mape, mape_rejected) = match mape(&p, &t) {
            Ok(v) => (Some(v), Vec::new()),
            Err(EvalError::NearZeroTruth { indices }) => {
                (None, indices.iter().map(|&i| preds[i].example_id.clone()).collect())
            }
            Err(e) => return Err(e),
        };
        params.push(ParamMetrics {
            parameter: name.to_string(),
            mape,
            rmse: rmse(&p, &t)?,
            mape_rejected,
            near_zero_db: if j == 0 {
                0
            } else {
                t.iter().filter(|v| v.abs() <= NEAR_ZERO_DB).count()
            },
        });
    }
    Ok(GroupMetrics { n: preds.len(), params })
}

pub fn split_report(preds: &[Prediction]) -> Result<SplitReport, EvalError> {
    let all: Vec<&Prediction> = preds.iter().collect();
    let overall = group_metrics(&all)?;
    let mut groups: BTreeMap<u64, Vec<&Prediction>> = BTreeMap::new();
    for p in preds {
        groups.entry(order_key(p.snr_db)).or_default().push(p);
    }
    let mut per_snr = Vec::with_capacity(groups.len());
    for g in groups.values().rev() {
        per_snr.push(SnrGroup {
            snr_db: g[0].snr_db,
            metrics: group_metrics(g)?,
        });
    }
    Ok(SplitReport { overall, per_snr })
}

/// Monotone map from finite f64 to u64.
fn order_key(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Predictions and metrics for the test split, and the train split when asked.
pub struct Evaluation {
    pub report: EvalReport,
    pub test_predictions: Vec<Prediction>,
}

pub fn evaluate(est: &dyn Estimator, ds: &Dataset, include_train: bool) -> Result<Evaluation, EvalError> {
    let test = ds.load_split(Split::Test)?;
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let test_predictions = predict_all(est, &test)?;
    let train = if include_train {
        let train = ds.load_split(Split::Train)?;
        if train.is_empty() {
            None
        } else {
            Some(split_report(&predict_all(est, &train)?)?)
        }
    } else {
        None
    };
    Ok(Evaluation {
        report: EvalReport {
            model: est.name(),
            train,
            test: split_report(&test_predictions)?,
        },
        test_predictions,
    })
}

/// Integer percent, as in the published tables.
pub fn format_mape(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{}", x.round() as i64),
        None => "n/a".into(),
    }
}

/// One decimal place.
pub fn format_rmse(v: f64) -> String {
    format!("{:.1}", (v * 10.0).round() / 10.0)
}

const COLUMN_NAMES: [&str; 4] = ["T60", "C50", "C80", "DRR"];

fn table_header() -> String {
    let mut s = String::from("Model");
    for c in COLUMN_NAMES {
        let _ = write!(s, " & {c} eM & {c} eR");
    }
    s.push_str(" \\\\");
    s
}

fn table_row(label: &str, g: &GroupMetrics) -> String {
    let mut s = label.to_string();
    for p in &g.params {
        let _ = write!(s, " & {} & {}", format_mape(p.mape), format_rmse(p.rmse));
    }
    s.push_str(" \\\\");
    s
}

/// Rows are models, columns parameter x metric: ε_M in integer percent,
/// ε_R with one decimal (seconds for T60, dB otherwise).
pub fn render_table(rows: &[(&str, &GroupMetrics)]) -> String {
    let mut s = table_header();
    s.push('\n');
    for (label, g) in rows {
        s.push_str(&table_row(label, g));
        s.push('\n');
    }
    s
}

/// Plain-text report: overall table, per-SNR table and sample counts.
pub fn render_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let mut section = |title: &str, split: &SplitReport| {
        let _ = writeln!(s, "{title} (n = {})", split.overall.n);
        s.push_str(&render_table(&[(&r.model, &split.overall)]));
        s.push('\n');
        let _ = writeln!(s, "{title} by SNR");
        let labels: Vec<String> = split.per_snr.iter().map(|g| format!("{} dB", g.snr_db)).collect();
        let rows: Vec<(&str, &GroupMetrics)> = labels
            .iter()
            .zip(&split.per_snr)
            .map(|(l, g)| (l.as_str(), &g.metrics))
            .collect();
        s.push_str(&render_table(&rows));
        let near: Vec<String> = split.overall.params[1..]
            .iter()
            .map(|p| format!("{} {}", p.parameter, p.near_zero_db))
            .collect();
        let _ = writeln!(s, "truths within 1 dB of zero: {}", near.join(", "));
        for p in split.overall.params.iter().filter(|p| p.mape.is_none()) {
            let _ = writeln!(s, "{} MAPE undefined: {} near-zero truths", p.parameter, p.mape_rejected.len());
        }
        s.push('\n');
    };
    section("Test", &r.test);
    if let Some(train) = &r.train {
        section("Train", train);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub example_id: String,
    pub parameter: String,
    pub truth: f64,
    pub prediction: f64,
    pub snr_db: f64,
}

pub fn scatter_rows(preds: &[Prediction]) -> Vec<ScatterRow> {
    preds
        .iter()
        .flat_map(|p| {
            PARAMETER_NAMES.iter().enumerate().map(move |(j, name)| ScatterRow {
                example_id: p.example_id.clone(),
                parameter: name.to_string(),
                truth: p.truth[j],
                prediction: p.prediction[j],
                snr_db: p.snr_db,
            })
        })
        .collect()
}

/// CSV with columns `example_id,parameter,truth,prediction,snr_db`.
pub fn export_scatter(preds: &[Prediction], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::output(path, e))?;
    for row in scatter_rows(preds) {
        w.serialize(row).map_err(|e| EvalError::output(path, e))?;
    }
    w.flush().map_err(|e| EvalError::output(path, e))
}

pub fn read_scatter(path: &Path) -> Result<Vec<ScatterRow>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| EvalError::output(path, e))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| EvalError::output(path, e))
}

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const SCATTER_CSV: &str = "scatter.csv";

/// Writes `report.txt`, `report.json` (full precision) and `scatter.csv`
/// (test split) into `dir`.
pub fn write_reports(ev: &Evaluation, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::output(dir, e))?;
    let txt = dir.join(REPORT_TXT);
    std::fs::write(&txt, render_report(&ev.report)).map_err(|e| EvalError::output(&txt, e))?;
    let json = dir.join(REPORT_JSON);
    let mut body = serde_json::to_string_pretty(&ev.report).map_err(|e| EvalError::output(&json, e))?;
    body.push('\n');
    std::fs::write(&json, body).map_err(|e| EvalError::output(&json, e))?;
    export_scatter(&ev.test_predictions, &dir.join(SCATTER_CSV))
}

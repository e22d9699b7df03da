use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::network::Network;
use super::spec::ModelSpec;
use super::train::TrainConfig;
use super::{ModelError, Tensor};
use crate::features::{FeatureConfig, FeatureMatrix};

/// Smallest standard deviation used for scaling; flatter columns are only
/// centered.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-column mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits from rows of `width` values each.
    pub fn fit<R, I>(width: usize, rows: R) -> Self
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = f64>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for row in rows {
            for (j, v) in row.into_iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd < STD_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn forward(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.std[j]
    }

    pub fn inverse(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }
}

/// Training record stored with the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub train_config: TrainConfig,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Everything in a model file besides the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub spec: ModelSpec,
    /// `(frames, coeffs, channels)`
    pub input_shape: [usize; 3],
    pub feature_config: FeatureConfig,
    pub feature_stats: Standardizer,
    pub target_names: Vec<String>,
    pub target_stats: Standardizer,
    pub parameter_count: usize,
    pub provenance: Option<Provenance>,
    pub deviations: Vec<String>,
}

/// Notes on choices that go beyond the architecture description.
pub fn standard_deviations() -> Vec<String> {
    vec![
        "targets z-scored per parameter with training-set statistics; predictions de-standardized".into(),
        "input features standardized per coefficient with training-set statistics".into(),
        "2x2 max pooling after each conv block, frequency pooling skipped when later kernels would not fit".into(),
        "valid padding, dropout 0.2 after conv blocks, single GRU bias per gate".into(),
    ]
}

/// A trained estimator: f32 network plus input and output scaling.
#[derive(Debug, Clone)]
pub struct Model {
    pub meta: ModelMeta,
    pub net: Network<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

impl Model {
    pub fn input_frames(&self) -> usize {
        self.meta.input_shape[0]
    }

    pub fn input_coeffs(&self) -> usize {
        self.meta.input_shape[1]
    }

    /// Standardized `[1, frames, coeffs]` block for one example.
    pub(crate) fn standardized_input(&self, m: &FeatureMatrix, out: &mut [f32]) -> Result<(), ModelError> {
        standardize_into(&self.meta.feature_stats, self.input_frames(), self.input_coeffs(), m, out)
    }

    /// Predicts `(rt60, c50, c80, drr)` in physical units for each example.
    pub fn predict_batch(&self, features: &[&FeatureMatrix]) -> Result<Vec<[f64; 4]>, ModelError> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let block = self.input_frames() * self.input_coeffs();
        let mut data = vec![0.0f32; features.len() * block];
        for (m, out) in features.iter().zip(data.chunks_exact_mut(block)) {
            self.standardized_input(m, out)?;
        }
        let x = Tensor::new(vec![features.len(), 1, self.input_frames(), self.input_coeffs()], data);
        let y = self.net.infer(&x)?;
        if !y.is_finite() {
            return Err(ModelError::NonFinite("prediction".into()));
        }
        Ok(y
            .data
            .chunks_exact(4)
            .map(|z| std::array::from_fn(|j| self.meta.target_stats.inverse(j, z[j] as f64)))
            .collect())
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<[f64; 4], ModelError> {
        Ok(self.predict_batch(&[features])?[0])
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }
}

pub(crate) fn standardize_into(
    stats: &Standardizer,
    frames: usize,
    coeffs: usize,
    m: &FeatureMatrix,
    out: &mut [f32],
) -> Result<(), ModelError> {
    if m.rows != frames || m.cols != coeffs {
        return Err(ModelError::Shape(format!(
            "model expects {frames}x{coeffs} features, got {}x{}",
            m.rows, m.cols
        )));
    }
    for (r, row) in m.values.chunks_exact(coeffs).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[r * coeffs + j] = stats.forward(j, v as f64) as f32;
        }
    }
    Ok(())
}

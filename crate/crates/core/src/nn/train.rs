use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{standard_deviations, standardize_into, Model, ModelMeta, Provenance, Standardizer};
use super::network::{mse_loss, Network};
use super::spec::ModelSpec;
use super::{ModelError, Tensor};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::util::derive_seed;

const SEED_INIT: u64 = 1;
const SEED_VALIDATION: u64 = 2;
const SEED_SHUFFLE: u64 = 3;
const SEED_DROPOUT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Store the Adam moments of the best epoch in the model file.
    pub keep_optimizer_state: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 64,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            patience: 15,
            max_epochs: 100,
            seed: 0,
            validation_fraction: 0.1,
            keep_optimizer_state: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction {} must lie strictly between 0 and 1",
                self.validation_fraction
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("invalid optimizer settings".into());
        }
        Ok(())
    }
}

/// Patience bookkeeping on a validation loss sequence.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the loss of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub best_validation_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub architecture: String,
    pub parameter_count: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Seeded split of `0..n` into (train, validation) index lists.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), ModelError> {
    if n < 2 {
        return Err(ModelError::Config(format!(
            "need at least 2 training examples to carve a validation set, got {n}"
        )));
    }
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SEED_VALIDATION])));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

struct Batcher<'a> {
    features: &'a [FeatureMatrix],
    z_targets: &'a [[f32; 4]],
    stats: &'a Standardizer,
    frames: usize,
    coeffs: usize,
}

impl Batcher<'_> {
    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        let block = self.frames * self.coeffs;
        let mut x = vec![0.0f32; idx.len() * block];
        for (&i, out) in idx.iter().zip(x.chunks_exact_mut(block)) {
            standardize_into(self.stats, self.frames, self.coeffs, &self.features[i], out)?;
        }
        let y = idx.iter().flat_map(|&i| self.z_targets[i]).collect();
        Ok((
            Tensor::new(vec![idx.len(), 1, self.frames, self.coeffs], x),
            Tensor::new(vec![idx.len(), 4], y),
        ))
    }

    fn mean_loss(&self, net: &Network<f32>, idx: &[usize], batch_size: usize) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for chunk in idx.chunks(batch_size) {
            let (x, y) = self.batch(chunk)?;
            let pred = net.infer(&x)?;
            total += mse_loss(&pred, &y)?.0 * chunk.len() as f64;
        }
        Ok(total / idx.len() as f64)
    }
}

/// Trains a fresh network on `(features, targets)`; a seeded slice of the
/// examples is held out for early stopping. Returns the weights of the best
/// validation epoch.
pub fn train(
    spec: &ModelSpec,
    features: &[FeatureMatrix],
    targets: &[[f64; 4]],
    feature_config: &FeatureConfig,
    cfg: &TrainConfig,
) -> Result<(Model, History), ModelError> {
    cfg.validate()?;
    if features.len() != targets.len() {
        return Err(ModelError::Config(format!(
            "{} feature matrices but {} target rows",
            features.len(),
            targets.len()
        )));
    }
    let first = features
        .first()
        .ok_or_else(|| ModelError::Config("empty training set".into()))?;
    let (frames, coeffs) = (first.rows, first.cols);
    if let Some(bad) = features.iter().position(|m| m.rows != frames || m.cols != coeffs) {
        return Err(ModelError::Shape(format!(
            "example {bad} is {}x{}, expected {frames}x{coeffs}",
            features[bad].rows, features[bad].cols
        )));
    }
    if targets.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training targets".into()));
    }

    let (train_idx, val_idx) = validation_split(features.len(), cfg.validation_fraction, cfg.seed)?;
    let feature_stats = Standardizer::fit(
        coeffs,
        train_idx
            .iter()
            .flat_map(|&i| features[i].values.chunks_exact(coeffs))
            .map(|row| row.iter().map(|&v| v as f64)),
    );
    let target_stats = Standardizer::fit(4, train_idx.iter().map(|&i| targets[i]));
    let z_targets: Vec<[f32; 4]> = targets
        .iter()
        .map(|t| std::array::from_fn(|j| target_stats.forward(j, t[j]) as f32))
        .collect();

    let mut net = Network::<f32>::build(spec, frames, coeffs, derive_seed(cfg.seed, &[SEED_INIT]))?;
    let parameter_count = net.parameter_count();
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(&net.params());
    let batcher = Batcher {
        features,
        z_targets: &z_targets,
        stats: &feature_stats,
        frames,
        coeffs,
    };

    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = (net.snapshot(), cfg.keep_optimizer_state.then(|| adam.clone()));
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.max_epochs {
        let e = epoch as u64;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SEED_SHUFFLE, e])));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SEED_DROPOUT, e]));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = batcher.batch(chunk)?;
            let (pred, tape) = net.forward_train(&x, &mut dropout_rng)?;
            let (loss, grad) = mse_loss(&pred, &y)
                .map_err(|_| ModelError::NonFinite(format!("loss at epoch {epoch}, batch {b}")))?;
            net.backward(tape, &grad);
            adam_step(&mut net.params_mut(), &mut adam, &adam_cfg);
            net.zero_grad();
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        let validation_loss = batcher.mean_loss(&net, &val_idx, cfg.batch_size)?;
        let decision = stopper.observe(epoch, validation_loss);
        if decision.improved {
            best = (net.snapshot(), cfg.keep_optimizer_state.then(|| adam.clone()));
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.5}, validation {validation_loss:.5}{}",
            if decision.improved { " *" } else { "" }
        );
        records.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            best_validation_loss: stopper.best_loss(),
            improved: decision.improved,
        });
        if decision.stop {
            stopped_early = true;
            break;
        }
    }
    net.restore(&best.0);

    let meta = ModelMeta {
        spec: spec.clone(),
        input_shape: [frames, coeffs, 1],
        feature_config: feature_config.clone(),
        feature_stats,
        target_names: crate::PARAMETER_NAMES.iter().map(|s| s.to_string()).collect(),
        target_stats,
        parameter_count,
        provenance: Some(Provenance {
            seed: cfg.seed,
            train_config: cfg.clone(),
            train_examples: train_idx.len(),
            validation_examples: val_idx.len(),
            epochs_run: records.len(),
            best_epoch: stopper.best_epoch(),
            best_validation_loss: stopper.best_loss(),
        }),
        deviations: standard_deviations(),
    };
    let history = History {
        architecture: spec.architecture.to_string(),
        parameter_count,
        epochs: records,
        best_epoch: stopper.best_epoch(),
        stopped_early,
    };
    Ok((
        Model {
            meta,
            net,
            optimizer: best.1,
        },
        history,
    ))
}

//! From-scratch network stack: layers with explicit backward passes, the
//! three architectures, Adam, early-stopped training and model files.

mod adam;
pub mod gradcheck;
mod io;
pub mod layers;
mod model;
mod network;
mod real;
mod spec;
mod tensor;
mod train;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{load_model, read_model, save_model, write_model, RVLM_MAGIC, RVLM_VERSION};
pub use layers::{ActivationKind, ForwardCtx, Mode};
pub use model::{standard_deviations, Model, ModelMeta, Provenance, Standardizer, STD_FLOOR};
pub use network::{mse_loss, Layer, Network, Tape};
pub use real::Real;
pub use spec::{pool_schedule, Architecture, LayerSpec, ModelSpec, CONV_DROPOUT, OUTPUT_WIDTH};
pub use tensor::{Buffer, Param, Tensor};
pub use train::{train, validation_split, EarlyStopping, EpochRecord, History, StopDecision, TrainConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("input {frames}x{coeffs} is too small for conv block {stage}")]
    InputTooSmall { frames: usize, coeffs: usize, stage: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Builds a network for `(frames, coeffs, 1)` inputs.
pub fn build_model(spec: &ModelSpec, frames: usize, coeffs: usize, seed: u64) -> Result<Network<f32>, ModelError> {
    Network::build(spec, frames, coeffs, seed)
}

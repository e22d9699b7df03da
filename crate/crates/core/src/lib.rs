//! Room-acoustics toolkit: ground-truth RT60/C50/C80/DRR extraction from room
//! impulse responses, reverberant dataset synthesis with MFCC features, and a
//! small from-scratch CRNN stack for blind joint estimation of the four
//! parameters from reverberant, noisy audio.
//!
//! The crate is organised bottom-up:
//!
//! - [`signal`]: waveform primitives (WAV ingestion, resampling, convolution,
//!   noise injection, chunking, onset trimming, octave filters).
//! - [`rir`]: Schroeder decay, reverberation time, clarity, DRR and per-band
//!   analysis of impulse responses.
//! - [`features`]: MFCC extraction and the `RVLF` feature blob format.
//! - [`dataset`]: manifests, splits, balancing and dataset synthesis.
//! - [`nn`]: tensors, layers, the three architectures, Adam and training.
//! - [`eval`]: MAPE/RMSE, per-SNR reports and scatter export.

pub mod dataset;
pub mod eval;
pub mod features;
pub mod nn;
pub mod rir;
pub mod signal;
pub mod util;

pub use features::{FeatureConfig, FeatureMatrix};
pub use rir::{AcousticParams, DecayCurve};
pub use signal::{OctaveBand, Signal};

/// Sample rate every signal is brought to on ingestion.
pub const SAMPLE_RATE: u32 = 16_000;

/// The four regression targets, in output order.
pub const PARAMETER_NAMES: [&str; 4] = ["rt60", "c50", "c80", "drr"];

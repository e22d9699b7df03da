//! MFCC features and their on-disk blob format.
//!
//! Per frame: periodic Hann window, power spectrum, HTK-mel triangular
//! filterbank, `10 log10(max(p, 1e-10))`, orthonormal DCT-II. No
//! pre-emphasis, no deltas, no padding (the final partial frame is dropped).

mod rvlf;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::Signal;

pub use rvlf::{read_rvlf, write_rvlf, RVLF_HEADER_LEN, RVLF_MAGIC, RVLF_VERSION};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("signal has {samples} samples, shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("signal is at {actual} Hz, features are configured for {expected} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("invalid feature blob: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// MFCC configuration. Serialized into dataset and model metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_size_s: f64,
    pub frame_step_s: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub n_coeffs: usize,
    pub log_floor: f64,
    pub window: String,
    pub mel_scale: String,
    pub pre_emphasis: bool,
    pub deltas: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::SAMPLE_RATE,
            frame_size_s: 0.025,
            frame_step_s: 0.010,
            n_fft: 512,
            n_mels: 40,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            n_coeffs: 20,
            log_floor: 1e-10,
            window: "hann-periodic".into(),
            mel_scale: "htk".into(),
            pre_emphasis: false,
            deltas: false,
        }
    }
}

impl FeatureConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_size_s * self.sample_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.frame_step_s * self.sample_rate as f64).round() as usize
    }

    /// Frames produced for `num_samples` input samples (no padding).
    pub fn frame_count(&self, num_samples: usize) -> usize {
        let frame = self.frame_len();
        if num_samples < frame {
            0
        } else {
            1 + (num_samples - frame) / self.hop_len()
        }
    }
}

/// Frames x coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
    pub frame_size_s: f64,
    pub frame_step_s: f64,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), rows * cols, "feature matrix shape mismatch");
        let d = FeatureConfig::default();
        Self {
            rows,
            cols,
            values,
            frame_size_s: d.frame_size_s,
            frame_step_s: d.frame_step_s,
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn n_coeffs(&self) -> usize {
        self.cols
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the rfft bins, peaking at 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Filter centers in Hz.
    pub centers_hz: Vec<f64>,
    /// `n_mels` rows of `n_fft / 2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let n_bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let weights = (0..cfg.n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - left) / (center - left);
                        let down = (right - f) / (right - center);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect();
        Self {
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
            weights,
        }
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = w.iter().zip(power).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable MFCC extractor (window, filterbank, DCT and FFT plan).
pub struct Mfcc {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl Mfcc {
    pub fn new(cfg: FeatureConfig) -> Self {
        let n = cfg.frame_len();
        assert!(n <= cfg.n_fft, "frame longer than FFT size");
        assert!(cfg.n_coeffs <= cfg.n_mels);
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let m = cfg.n_mels as f64;
        let dct = (0..cfg.n_coeffs)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..cfg.n_mels)
                    .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * m)).cos())
                    .collect()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            filterbank: MelFilterbank::new(&cfg),
            cfg,
            window,
            dct,
            fft,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    fn check(&self, s: &Signal) -> Result<usize, FeatureError> {
        if s.sample_rate != self.cfg.sample_rate {
            return Err(FeatureError::SampleRate {
                expected: self.cfg.sample_rate,
                actual: s.sample_rate,
            });
        }
        match self.cfg.frame_count(s.len()) {
            0 => Err(FeatureError::TooShort {
                samples: s.len(),
                frame: self.cfg.frame_len(),
            }),
            n => Ok(n),
        }
    }

    /// Log mel energies (dB, floored) per frame, before the cosine transform.
    pub fn log_mel(&self, s: &Signal) -> Result<Vec<Vec<f64>>, FeatureError> {
        let frames = self.check(s)?;
        let (frame, hop, n_fft) = (self.cfg.frame_len(), self.cfg.hop_len(), self.cfg.n_fft);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_fft / 2 + 1];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let seg = &s.samples[f * hop..f * hop + frame];
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                b.re = x * w;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let mut mel = vec![0.0; self.cfg.n_mels];
            self.filterbank.apply(&power, &mut mel);
            for v in &mut mel {
                *v = 10.0 * v.max(self.cfg.log_floor).log10();
            }
            out.push(mel);
        }
        Ok(out)
    }

    pub fn compute(&self, s: &Signal) -> Result<FeatureMatrix, FeatureError> {
        let log_mel = self.log_mel(s)?;
        let cols = self.cfg.n_coeffs;
        let mut values = Vec::with_capacity(log_mel.len() * cols);
        for frame in &log_mel {
            for basis in &self.dct {
                let c: f64 = basis.iter().zip(frame).map(|(a, b)| a * b).sum();
                values.push(c as f32);
            }
        }
        Ok(FeatureMatrix {
            rows: log_mel.len(),
            cols,
            values,
            frame_size_s: self.cfg.frame_size_s,
            frame_step_s: self.cfg.frame_step_s,
        })
    }
}

/// MFCC matrix of `s` under `config`.
pub fn mfcc(s: &Signal, config: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    Mfcc::new(config.clone()).compute(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_second_chunk_has_798_frames() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.frame_count(128_000), 798);
        let m = mfcc(&Signal::zeros(128_000, 16_000), &cfg).unwrap();
        assert_eq!((m.rows, m.cols), (798, 20));
    }

    #[test]
    fn silence_maps_to_floor_constant() {
        let cfg = FeatureConfig::default();
        let m = mfcc(&Signal::zeros(4000, 16_000), &cfg).unwrap();
        // c0 = sqrt(1/40) * 40 * (-100 dB); higher coefficients vanish.
        let c0 = -(40f64).sqrt() * 100.0;
        for r in 0..m.rows {
            let row = m.row(r);
            assert!((row[0] as f64 - c0).abs() < 1e-3);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-3));
        }
    }

    #[test]
    fn rejects_short_input() {
        let err = mfcc(&Signal::zeros(399, 16_000), &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, FeatureError::TooShort { .. }));
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 125.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 999.985_76).abs() < 1e-3);
    }
}

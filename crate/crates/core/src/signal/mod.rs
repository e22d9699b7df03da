//! Waveform primitives.
//!
//! Every operation here is a pure function of its inputs (noise generation
//! included, via an explicit seed).

mod filter;
mod resample;
mod wav;

use std::path::PathBuf;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use thiserror::Error;

pub use filter::{bandpass_octave, Biquad, ButterworthBandpass};
pub use resample::resample;
pub use wav::{load_audio, write_wav, write_wav_channels, WavEncoding};

/// Fraction of the global peak at which the direct sound is considered to
/// have arrived (about -34 dB).
pub const ONSET_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("cannot read audio file {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("unsupported WAV encoding in {path}: {format} with {bits} bits per sample")]
    UnsupportedEncoding {
        path: PathBuf,
        format: String,
        bits: u16,
    },
    #[error("audio file {path} contains no samples")]
    EmptyAudio { path: PathBuf },
    #[error("cannot write audio file {path}: {message}")]
    WriteFailed { path: PathBuf, message: String },
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },
    #[error("signal is silent")]
    Silent,
    #[error("signal is empty")]
    Empty,
    #[error("octave band {center_hz} Hz is not valid at {sample_rate} Hz")]
    InvalidBand { center_hz: u32, sample_rate: u32 },
    #[error("chunk duration must be positive, got {0}")]
    InvalidDuration(f64),
}

/// A mono sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.energy() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn truncated(mut self, len: usize) -> Self {
        self.samples.truncate(len);
        self
    }
}

/// One of the six analysed octave bands (125 Hz to 4 kHz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct OctaveBand(u32);

impl OctaveBand {
    pub const CENTERS_HZ: [u32; 6] = [125, 250, 500, 1000, 2000, 4000];

    pub fn new(center_hz: u32) -> Option<Self> {
        Self::CENTERS_HZ
            .contains(&center_hz)
            .then_some(Self(center_hz))
    }

    /// All bands, sorted by center frequency.
    pub fn all() -> [OctaveBand; 6] {
        Self::CENTERS_HZ.map(OctaveBand)
    }

    pub fn center_hz(self) -> u32 {
        self.0
    }

    pub fn lower_edge_hz(self) -> f64 {
        self.0 as f64 / std::f64::consts::SQRT_2
    }

    pub fn upper_edge_hz(self) -> f64 {
        self.0 as f64 * std::f64::consts::SQRT_2
    }

    /// Whether the band can be realised at `sample_rate` (upper edge below Nyquist).
    pub fn fits(self, sample_rate: u32) -> bool {
        self.upper_edge_hz() < sample_rate as f64 / 2.0
    }
}

impl TryFrom<u32> for OctaveBand {
    type Error = String;

    fn try_from(hz: u32) -> Result<Self, Self::Error> {
        OctaveBand::new(hz).ok_or_else(|| format!("{hz} Hz is not an analysed octave band"))
    }
}

impl From<OctaveBand> for u32 {
    fn from(b: OctaveBand) -> u32 {
        b.0
    }
}

impl std::fmt::Display for OctaveBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 >= 1000 {
            write!(f, "{}k", self.0 / 1000)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Divides every sample by the peak magnitude. Silent input is returned unchanged.
pub fn normalize_minmax(s: &Signal) -> Signal {
    let peak = s.peak();
    if peak == 0.0 {
        return s.clone();
    }
    Signal::new(s.samples.iter().map(|x| x / peak).collect(), s.sample_rate)
}

/// Full linear convolution via zero-padded FFT; output length is `len(x) + len(h) - 1`.
pub fn convolve(x: &Signal, h: &Signal) -> Result<Signal, SignalError> {
    if x.sample_rate != h.sample_rate {
        return Err(SignalError::SampleRateMismatch {
            left: x.sample_rate,
            right: h.sample_rate,
        });
    }
    if x.is_empty() || h.is_empty() {
        return Err(SignalError::Empty);
    }
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    // Pack x into the real part and h into the imaginary part: one forward
    // transform yields both spectra through conjugate symmetry.
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf.iter_mut().zip(&x.samples) {
        b.re = v;
    }
    for (b, &v) in buf.iter_mut().zip(&h.samples) {
        b.im = v;
    }
    fwd.process(&mut buf);
    let mut prod = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let z = buf[k];
        let zc = buf[(n - k) % n].conj();
        let xs = (z + zc) * 0.5;
        let hs = (z - zc) * Complex64::new(0.0, -0.5);
        prod[k] = xs * hs;
    }
    inv.process(&mut prod);
    let scale = 1.0 / n as f64;
    let samples = prod[..out_len].iter().map(|c| c.re * scale).collect();
    Ok(Signal::new(samples, x.sample_rate))
}

/// Adds seeded Gaussian white noise so that the empirical SNR over the whole
/// signal equals `snr_db` (powers as mean squared amplitude).
pub fn add_noise_at_snr(y: &Signal, snr_db: f64, seed: u64) -> Result<Signal, SignalError> {
    let p_signal = y.power();
    if p_signal == 0.0 {
        return Err(SignalError::Silent);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let target = p_signal / 10f64.powf(snr_db / 10.0);
    let gain = (target / p_noise).sqrt();
    let samples = y
        .samples
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + gain * n)
        .collect();
    Ok(Signal::new(samples, y.sample_rate))
}

/// Splits into consecutive non-overlapping chunks of `duration_s`; a shorter
/// trailing remainder is dropped.
pub fn chunk(s: &Signal, duration_s: f64) -> Result<Vec<Signal>, SignalError> {
    if !(duration_s > 0.0) {
        return Err(SignalError::InvalidDuration(duration_s));
    }
    let len = (duration_s * s.sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(SignalError::InvalidDuration(duration_s));
    }
    Ok(s.samples
        .chunks_exact(len)
        .map(|c| Signal::new(c.to_vec(), s.sample_rate))
        .collect())
}

/// Index of the first sample reaching [`ONSET_THRESHOLD`] times the global peak.
pub fn onset_index(h: &Signal) -> Result<usize, SignalError> {
    let peak = h.peak();
    if peak == 0.0 {
        return Err(SignalError::Silent);
    }
    let threshold = ONSET_THRESHOLD * peak;
    Ok(h.samples
        .iter()
        .position(|x| x.abs() >= threshold)
        .expect("peak sample always passes the threshold"))
}

/// Removes the leading samples before the direct-sound onset.
pub fn trim_to_onset(h: &Signal) -> Result<Signal, SignalError> {
    let start = onset_index(h)?;
    Ok(Signal::new(h.samples[start..].to_vec(), h.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec(), 16_000)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_minmax(&sig(&[0.5, -0.25])).samples, vec![1.0, -0.5]);
        let unit = sig(&[0.3, -1.0, 0.2]);
        assert_eq!(normalize_minmax(&unit), unit);
        assert_eq!(normalize_minmax(&sig(&[0.0; 4])).samples, vec![0.0; 4]);
    }

    #[test]
    fn normalized_peak_is_exactly_one() {
        let s = sig(&[0.123, -0.777, 0.5]);
        assert_eq!(normalize_minmax(&s).peak(), 1.0);
    }

    #[test]
    fn convolve_identity_and_shift() {
        let x = sig(&[1.0, 2.0, 3.0]);
        let y = convolve(&x, &sig(&[1.0])).unwrap();
        for (a, b) in y.samples.iter().zip(&x.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = convolve(&x, &sig(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(y.len(), 5);
        let expect = [0.0, 0.0, 1.0, 2.0, 3.0];
        for (a, b) in y.samples.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_rejects_rate_mismatch() {
        let err = convolve(&sig(&[1.0]), &Signal::new(vec![1.0], 8000)).unwrap_err();
        assert!(matches!(err, SignalError::SampleRateMismatch { .. }));
    }

    #[test]
    fn noise_is_deterministic_and_rejects_silence() {
        let y = sig(&(0..1000).map(|i| (i as f64 * 0.1).sin()).collect::<Vec<_>>());
        let a = add_noise_at_snr(&y, 10.0, 3).unwrap();
        let b = add_noise_at_snr(&y, 10.0, 3).unwrap();
        assert_eq!(a, b);
        let c = add_noise_at_snr(&y, 10.0, 4).unwrap();
        assert_ne!(a, c);
        assert!(matches!(add_noise_at_snr(&sig(&[0.0; 8]), 0.0, 1), Err(SignalError::Silent)));
    }

    #[test]
    fn zero_db_noise_matches_signal_power() {
        let y = sig(&(0..16000).map(|i| (i as f64 * 0.01).sin()).collect::<Vec<_>>());
        let out = add_noise_at_snr(&y, 0.0, 11).unwrap();
        let p_n = out
            .samples
            .iter()
            .zip(&y.samples)
            .map(|(o, s)| (o - s).powi(2))
            .sum::<f64>()
            / y.len() as f64;
        let db = 10.0 * (y.power() / p_n).log10();
        assert!(db.abs() < 0.1, "{db}");
    }

    #[test]
    fn chunk_examples() {
        let s = Signal::zeros(20 * 16_000, 16_000);
        let c = chunk(&s, 8.0).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.len() == 128_000));
        assert_eq!(chunk(&Signal::zeros(128_000, 16_000), 8.0).unwrap().len(), 1);
        assert!(chunk(&Signal::zeros(126_400, 16_000), 8.0).unwrap().is_empty());
        assert!(chunk(&s, 0.0).is_err());
    }

    #[test]
    fn trim_examples() {
        let mut v = vec![0.0; 300];
        v[100] = 1.0;
        let t = trim_to_onset(&sig(&v)).unwrap();
        assert_eq!(t.samples[0], 1.0);
        assert_eq!(t.len(), 200);
        assert_eq!(trim_to_onset(&t).unwrap(), t);
        assert!(matches!(trim_to_onset(&sig(&[0.0; 5])), Err(SignalError::Silent)));
    }

    #[test]
    fn octave_band_edges() {
        let b = OctaveBand::new(4000).unwrap();
        assert!((b.upper_edge_hz() - 5656.854).abs() < 1e-3);
        assert!(b.fits(16_000));
        assert!(!b.fits(8_000));
        assert!(OctaveBand::new(8000).is_none());
        assert_eq!(OctaveBand::all().len(), 6);
    }
}

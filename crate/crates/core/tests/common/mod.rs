//! Synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rvl_core::signal::{write_wav, WavEncoding};
use rvl_core::{Signal, SAMPLE_RATE};

pub const LN10: f64 = std::f64::consts::LN_10;

/// Amplitude time constant of an exponential envelope with the given RT60.
pub fn tau_for_rt60(rt60: f64) -> f64 {
    rt60 / (3.0 * LN10)
}

/// Onset-aligned RIR: random-sign carrier under the amplitude envelope
/// `exp(-t / tau)`. The first sample is +1.
pub fn exp_rir(tau: f64, seconds: f64, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let sign = if i == 0 || rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * (-t / tau).exp()
        })
        .collect();
    Signal::new(samples, SAMPLE_RATE)
}

/// Exponential RIR long enough for a clean -35 dB decay fit.
pub fn rir_with_rt60(rt60: f64, seed: u64) -> Signal {
    exp_rir(tau_for_rt60(rt60), rt60 * 1.1 + 0.2, seed)
}

/// Gated Gaussian noise: bursts of 50 to 400 ms separated by gaps of the
/// same range. Gaps carry a background about 40 dB down, as in a recording.
pub fn noise_bursts(seconds: f64, seed: u64) -> Signal {
    gated_noise(seconds, seed, 800..6400, 800..6400)
}

/// Gated Gaussian noise with burst and gap lengths drawn from the given
/// sample ranges.
pub fn gated_noise(seconds: f64, seed: u64, burst: Range<usize>, gap: Range<usize>) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut samples = vec![0.0; n];
    let mut i = 0;
    let mut on = true;
    while i < n {
        let range = if on { burst.clone() } else { gap.clone() };
        let len = rng.random_range(range).min(n - i);
        let gain = if on { rng.random_range(0.2..0.9) } else { 0.005 };
        for s in &mut samples[i..i + len] {
            let v: f64 = StandardNormal.sample(&mut rng);
            *s = (gain * v / 3.0).clamp(-1.0, 1.0);
        }
        i += len;
        on = !on;
    }
    Signal::new(samples, SAMPLE_RATE)
}

pub fn write(path: &Path, s: &Signal) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_wav(path, s, WavEncoding::Float32).unwrap();
}

/// Writes `n_audio` noise-burst sources of `audio_s` seconds and one RIR
/// per entry of `rt60s`. Returns `(audio_dir, rir_dir)`.
pub fn write_corpus(root: &Path, n_audio: usize, audio_s: f64, rt60s: &[f64]) -> (PathBuf, PathBuf) {
    let audio = root.join("audio");
    let rirs = root.join("rirs");
    for i in 0..n_audio {
        write(&audio.join(format!("src{i:02}.wav")), &noise_bursts(audio_s, 100 + i as u64));
    }
    for (i, &rt60) in rt60s.iter().enumerate() {
        write(&rirs.join(format!("rir{i:02}.wav")), &rir_with_rt60(rt60, 500 + i as u64));
    }
    (audio, rirs)
}

//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side of its center.
const ZERO_CROSSINGS: f64 = 32.0;
/// Cutoff relative to the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half_sq = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half_sq / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resamples `samples` from `from_hz` to `to_hz`.
///
/// Output length is `ceil(len * to / from)`, so durations are preserved. When
/// the rates are equal the input is returned untouched.
pub fn resample(samples: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    assert!(from_hz > 0 && to_hz > 0);
    if from_hz == to_hz || samples.is_empty() {
        return samples.to_vec();
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let up = (to_hz as u64 / g) as usize;
    let down = (from_hz as u64 / g) as usize;

    // Kernel in units of input samples.
    let cutoff = ROLLOFF * (to_hz as f64 / from_hz as f64).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let reach = half_width.ceil() as i64;
    let i0_beta = bessel_i0(KAISER_BETA);
    let taps = (2 * reach + 1) as usize;

    // One normalised row of taps per output phase.
    let table: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            let mut row: Vec<f64> = (-reach..=reach)
                .map(|j| {
                    let d = j as f64 - frac;
                    let t = d / half_width;
                    if t.abs() >= 1.0 {
                        return 0.0;
                    }
                    let w = bessel_i0(KAISER_BETA * (1.0 - t * t).sqrt()) / i0_beta;
                    cutoff * sinc(cutoff * d) * w
                })
                .collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            row
        })
        .collect();

    let out_len = (samples.len() as u64 * up as u64).div_ceil(down as u64) as usize;
    let n_in = samples.len() as i64;
    (0..out_len)
        .map(|n| {
            let pos = n as u64 * down as u64;
            let base = (pos / up as u64) as i64;
            let row = &table[(pos % up as u64) as usize];
            let start = base - reach;
            let mut acc = 0.0;
            for (k, &w) in row.iter().enumerate().take(taps) {
                let idx = start + k as i64;
                if idx >= 0 && idx < n_in {
                    acc += w * samples[idx as usize];
                }
            }
            acc
        })
        .collect()
}

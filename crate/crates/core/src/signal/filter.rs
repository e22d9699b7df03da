//! Butterworth band-pass design (bilinear transform with pre-warping) and
//! biquad cascades.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{OctaveBand, Signal, SignalError};

/// Prototype order of the octave filters; the band-pass has twice this order.
pub const OCTAVE_PROTOTYPE_ORDER: usize = 2;

/// Second-order section, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }

    /// Transposed direct form II, in place.
    fn run(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * out + s2;
            s2 = self.b[2] * input - self.a[1] * out;
            *v = out;
        }
    }
}

/// Digital Butterworth band-pass as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthBandpass {
    pub sections: Vec<Biquad>,
    pub sample_rate: u32,
}

impl ButterworthBandpass {
    /// Designs a band-pass of order `2 * prototype_order` between `low_hz` and
    /// `high_hz`, with unit gain at the geometric center.
    pub fn design(low_hz: f64, high_hz: f64, sample_rate: u32, prototype_order: usize) -> Self {
        assert!(prototype_order >= 1);
        let fs = sample_rate as f64;
        assert!(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0);
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh) = (warp(low_hz), warp(high_hz));
        let w0 = (wl * wh).sqrt();
        let bw = wh - wl;

        let n = prototype_order;
        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex64::from_polar(1.0, theta);
            // s^2 - p*bw*s + w0^2 = 0
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
            for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
                poles.push((2.0 * fs + s) / (2.0 * fs - s));
            }
        }

        // Pair each upper-half-plane pole with its conjugate; real poles pair up.
        let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
        let mut real: Vec<f64> = poles
            .iter()
            .filter(|p| p.im.abs() <= 1e-12)
            .map(|p| p.re)
            .collect();
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        real.sort_by(f64::total_cmp);
        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|p| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        for pair in real.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(r1 + r2), r1 * r2],
            });
        }

        // Unit gain at the digital image of the analog center frequency.
        let wc = 2.0 * (w0 / (2.0 * fs)).atan();
        let z_inv = Complex64::from_polar(1.0, -wc);
        let raw: Complex64 = sections.iter().map(|s| s.response(z_inv)).product();
        let per_section = raw.norm().recip().powf(1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Self {
            sections,
            sample_rate,
        }
    }

    /// Octave filter used for per-band analysis.
    pub fn octave(band: OctaveBand, sample_rate: u32) -> Result<Self, SignalError> {
        if !band.fits(sample_rate) {
            return Err(SignalError::InvalidBand {
                center_hz: band.center_hz(),
                sample_rate,
            });
        }
        Ok(Self::design(
            band.lower_edge_hz(),
            band.upper_edge_hz(),
            sample_rate,
            OCTAVE_PROTOTYPE_ORDER,
        ))
    }

    /// Magnitude response at `freq_hz`.
    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate as f64;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .product::<Complex64>()
            .norm()
    }

    /// Single causal forward pass; output length equals input length.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y);
        }
        y
    }
}

/// Octave band-pass (4th-order Butterworth, forward pass only).
pub fn bandpass_octave(s: &Signal, band: OctaveBand) -> Result<Signal, SignalError> {
    let f = ButterworthBandpass::octave(band, s.sample_rate)?;
    Ok(Signal::new(f.filter(&s.samples), s.sample_rate))
}

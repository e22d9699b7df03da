//! Ground-truth acoustic parameters of room impulse responses.
//!
//! All parameters are computed per octave band (125 Hz to 4 kHz) and averaged
//! arithmetically; clarity and DRR are averaged in the dB domain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{bandpass_octave, OctaveBand, Signal, SignalError};
use crate::util::sig9;

/// Levels below this are clamped in the decay curve.
pub const DECAY_FLOOR_DB: f64 = -100.0;
/// Fit range of the reverberation time regression.
pub const FIT_START_DB: f64 = -5.0;
pub const FIT_END_DB: f64 = -35.0;
/// Direct-sound window for DRR.
pub const DIRECT_WINDOW_MS: f64 = 2.5;
/// Upper bound on plausible broadband RT60; larger values are rejected.
pub const MAX_RT60_S: f64 = 4.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("impulse response is silent")]
    Silent,
    #[error("decay curve only reaches {reached_db:.1} dB; the fit needs -35 dB")]
    InsufficientDecayRange { reached_db: f64 },
    #[error("fitted decay slope is not negative")]
    NonDecaying,
    #[error("no energy after {boundary_ms} ms")]
    NoLateEnergy { boundary_ms: f64 },
    #[error("no energy before {boundary_ms} ms")]
    NoEarlyEnergy { boundary_ms: f64 },
    #[error("every octave band failed: {0:?}")]
    AllBandsFailed(Vec<ExcludedBand>),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl AnalysisError {
    /// Short machine-readable name used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisError::Silent => "Silent",
            AnalysisError::InsufficientDecayRange { .. } => "InsufficientDecayRange",
            AnalysisError::NonDecaying => "NonDecaying",
            AnalysisError::NoLateEnergy { .. } => "NoLateEnergy",
            AnalysisError::NoEarlyEnergy { .. } => "NoEarlyEnergy",
            AnalysisError::AllBandsFailed(_) => "AllBandsFailed",
            AnalysisError::Signal(_) => "SignalError",
        }
    }
}

/// Schroeder backward-integrated energy decay in dB, 0 dB at the first sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub levels_db: Vec<f64>,
    pub sample_rate: u32,
}

impl DecayCurve {
    pub fn from_levels(levels_db: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            levels_db,
            sample_rate,
        }
    }

    pub fn min_level(&self) -> f64 {
        self.levels_db.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn schroeder_decay(h: &Signal) -> Result<DecayCurve, AnalysisError> {
    let last = h
        .samples
        .iter()
        .rposition(|&x| x != 0.0)
        .ok_or(AnalysisError::Silent)?;
    let mut tail = vec![0.0; last + 1];
    let mut acc = 0.0;
    for i in (0..=last).rev() {
        acc += h.samples[i] * h.samples[i];
        tail[i] = acc;
    }
    let total = tail[0];
    let levels_db = tail
        .iter()
        .map(|&e| (10.0 * (e / total).log10()).max(DECAY_FLOOR_DB))
        .collect();
    Ok(DecayCurve::from_levels(levels_db, h.sample_rate))
}

/// Ordinary least-squares line through every curve sample in [-35, -5] dB,
/// extrapolated to a 60 dB decay (twice the 30 dB decay time).
pub fn rt60_from_decay(d: &DecayCurve) -> Result<f64, AnalysisError> {
    let reached_db = d.min_level();
    if reached_db > FIT_END_DB {
        return Err(AnalysisError::InsufficientDecayRange { reached_db });
    }
    let fs = d.sample_rate as f64;
    let points: Vec<(f64, f64)> = d
        .levels_db
        .iter()
        .enumerate()
        .filter(|(_, &l)| (FIT_END_DB..=FIT_START_DB).contains(&l))
        .map(|(i, &l)| (i as f64 / fs, l))
        .collect();
    if points.len() < 2 {
        return Err(AnalysisError::InsufficientDecayRange { reached_db });
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(t, l)| {
        let dt = t - mean_t;
        (sxy + dt * (l - mean_l), sxx + dt * dt)
    });
    if sxx == 0.0 {
        return Err(AnalysisError::NonDecaying);
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return Err(AnalysisError::NonDecaying);
    }
    let rt30 = (FIT_START_DB - FIT_END_DB) / -slope;
    Ok(2.0 * rt30)
}

/// Early-to-late energy ratio in dB; the boundary sample belongs to the late part.
fn energy_ratio_db(h: &Signal, boundary_ms: f64) -> Result<f64, AnalysisError> {
    let k = ((boundary_ms * h.sample_rate as f64 / 1000.0).round() as usize).min(h.len());
    let early: f64 = h.samples[..k].iter().map(|x| x * x).sum();
    let late: f64 = h.samples[k..].iter().map(|x| x * x).sum();
    if late == 0.0 {
        return Err(AnalysisError::NoLateEnergy { boundary_ms });
    }
    if early == 0.0 {
        return Err(AnalysisError::NoEarlyEnergy { boundary_ms });
    }
    Ok(10.0 * (early / late).log10())
}

/// C50 / C80 clarity for `early_ms` of 50 or 80.
pub fn clarity(h: &Signal, early_ms: f64) -> Result<f64, AnalysisError> {
    energy_ratio_db(h, early_ms)
}

/// Direct-to-reverberant ratio with a 2.5 ms direct window from the onset.
pub fn drr(h: &Signal) -> Result<f64, AnalysisError> {
    energy_ratio_db(h, DIRECT_WINDOW_MS)
}

/// Parameters of one octave band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    pub band: OctaveBand,
    #[serde(serialize_with = "sig9::serialize")]
    pub rt60: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub c50: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub c80: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub drr: f64,
}

/// A band left out of the broadband mean, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedBand {
    pub band: OctaveBand,
    pub reason: String,
}

/// Per-band and broadband RT60 (s), C50, C80 and DRR (dB) of one RIR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticParams {
    #[serde(serialize_with = "sig9::serialize")]
    pub rt60: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub c50: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub c80: f64,
    #[serde(serialize_with = "sig9::serialize")]
    pub drr: f64,
    pub per_band: Vec<BandParams>,
    #[serde(default)]
    pub excluded_bands: Vec<ExcludedBand>,
}

impl AcousticParams {
    /// Builds broadband values as arithmetic means of the given bands.
    pub fn from_bands(per_band: Vec<BandParams>, excluded_bands: Vec<ExcludedBand>) -> Self {
        let n = per_band.len() as f64;
        let mean = |f: fn(&BandParams) -> f64| per_band.iter().map(f).sum::<f64>() / n;
        Self {
            rt60: mean(|b| b.rt60),
            c50: mean(|b| b.c50),
            c80: mean(|b| b.c80),
            drr: mean(|b| b.drr),
            per_band,
            excluded_bands,
        }
    }

    /// Broadband values in output order (rt60, c50, c80, drr).
    pub fn targets(&self) -> [f64; 4] {
        [self.rt60, self.c50, self.c80, self.drr]
    }

    /// Copy with every value rounded to the 9 significant digits used on disk,
    /// so in-memory values equal their serialized form.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| crate::util::round_sig(x, 9);
        Self {
            rt60: r(self.rt60),
            c50: r(self.c50),
            c80: r(self.c80),
            drr: r(self.drr),
            per_band: self
                .per_band
                .iter()
                .map(|b| BandParams {
                    band: b.band,
                    rt60: r(b.rt60),
                    c50: r(b.c50),
                    c80: r(b.c80),
                    drr: r(b.drr),
                })
                .collect(),
            excluded_bands: self.excluded_bands.clone(),
        }
    }
}

fn analyze_band(h: &Signal, band: OctaveBand) -> Result<BandParams, AnalysisError> {
    let filtered = bandpass_octave(h, band)?;
    let decay = schroeder_decay(&filtered)?;
    Ok(BandParams {
        band,
        rt60: rt60_from_decay(&decay)?,
        c50: clarity(&filtered, 50.0)?,
        c80: clarity(&filtered, 80.0)?,
        drr: drr(&filtered)?,
    })
}

/// Full per-band analysis of an onset-trimmed RIR.
///
/// The unfiltered response must carry energy past 80 ms; otherwise band
/// filter ringing would be the only late energy and the ratios are
/// meaningless. Bands whose analysis fails are excluded from the means.
pub fn analyze(h: &Signal) -> Result<AcousticParams, AnalysisError> {
    if h.energy() == 0.0 {
        return Err(AnalysisError::Silent);
    }
    for boundary in [DIRECT_WINDOW_MS, 50.0, 80.0] {
        energy_ratio_db(h, boundary)?;
    }
    let mut per_band = Vec::new();
    let mut excluded = Vec::new();
    for band in OctaveBand::all() {
        match analyze_band(h, band) {
            Ok(p) => per_band.push(p),
            Err(e) => excluded.push(ExcludedBand {
                band,
                reason: e.to_string(),
            }),
        }
    }
    if per_band.is_empty() {
        return Err(AnalysisError::AllBandsFailed(excluded));
    }
    Ok(AcousticParams::from_bands(per_band, excluded))
}

/// Outcome of the plausibility screen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accept,
    Reject(String),
}

impl Validation {
    pub fn is_accept(&self) -> bool {
        matches!(self, Validation::Accept)
    }
}

/// Rejects RIRs whose broadband RT60 exceeds 4 s (4 s itself is accepted).
pub fn validate(p: &AcousticParams) -> Validation {
    if p.rt60 > MAX_RT60_S {
        Validation::Reject(format!(
            "broadband RT60 {:.2} s exceeds {MAX_RT60_S} s",
            p.rt60
        ))
    } else {
        Validation::Accept
    }
}

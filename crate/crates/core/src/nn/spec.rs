use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::ActivationKind;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Baseline,
    Crnn1,
    Crnn2,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::Baseline, Self::Crnn1, Self::Crnn2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Crnn1 => "crnn1",
            Self::Crnn2 => "crnn2",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown architecture {s:?} (expected baseline, crnn1 or crnn2)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { kernel: usize, filters: usize },
    Gru { units: usize },
    Dense { units: usize },
}

/// Layer stack plus the settings shared by its blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub layers: Vec<LayerSpec>,
    pub activation: ActivationKind,
    /// Batch normalization after every convolution.
    pub batch_norm: bool,
    /// Dropout after every conv block.
    pub dropout: f64,
}

pub const CONV_DROPOUT: f64 = 0.2;
pub const OUTPUT_WIDTH: usize = 4;

impl ModelSpec {
    pub fn preset(architecture: Architecture) -> Self {
        use LayerSpec::*;
        let (layers, activation) = match architecture {
            Architecture::Baseline => (
                vec![
                    Conv { kernel: 5, filters: 256 },
                    Conv { kernel: 5, filters: 256 },
                    Dense { units: 64 },
                    Dense { units: 4 },
                ],
                ActivationKind::Relu,
            ),
            Architecture::Crnn1 => (
                vec![
                    Conv { kernel: 5, filters: 256 },
                    Conv { kernel: 5, filters: 256 },
                    Gru { units: 64 },
                    Gru { units: 64 },
                    Dense { units: 64 },
                    Dense { units: 4 },
                ],
                ActivationKind::Relu,
            ),
            Architecture::Crnn2 => (
                vec![
                    Conv { kernel: 3, filters: 64 },
                    Conv { kernel: 3, filters: 128 },
                    Conv { kernel: 3, filters: 128 },
                    Conv { kernel: 3, filters: 128 },
                    Gru { units: 32 },
                    Gru { units: 32 },
                    Dense { units: 128 },
                    Dense { units: 64 },
                    Dense { units: 4 },
                ],
                ActivationKind::Elu,
            ),
        };
        Self {
            architecture,
            layers,
            activation,
            batch_norm: true,
            dropout: CONV_DROPOUT,
        }
    }

    /// Checks the stack is conv*, gru*, dense+ with a 4-wide output.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Spec(msg));
        let mut stage = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let (s, width) = match *layer {
                LayerSpec::Conv { kernel, filters } => {
                    if kernel == 0 {
                        return bad(format!("layer {i}: zero kernel"));
                    }
                    (0, filters)
                }
                LayerSpec::Gru { units } => (1, units),
                LayerSpec::Dense { units } => (2, units),
            };
            if width == 0 {
                return bad(format!("layer {i}: zero width"));
            }
            if s < stage {
                return bad(format!("layer {i}: layers must be ordered conv, gru, dense"));
            }
            stage = s;
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == OUTPUT_WIDTH => {}
            _ => return bad(format!("final layer must be Dense({OUTPUT_WIDTH})")),
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Conv { .. })) {
            return bad("at least one convolution is required".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn conv_kernels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { kernel, .. } => Some(*kernel),
                _ => None,
            })
            .collect()
    }

    pub fn has_recurrence(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Gru { .. }))
    }
}

/// Pool sizes `(time, freq)` after each conv block for a `frames x coeffs`
/// input. Time is always halved; frequency is halved only while the
/// remaining convolutions still fit, otherwise only time is pooled.
pub fn pool_schedule(kernels: &[usize], frames: usize, coeffs: usize) -> Result<Vec<(usize, usize)>, ModelError> {
    let too_small = |stage: usize| {
        Err(ModelError::InputTooSmall {
            frames,
            coeffs,
            stage,
        })
    };
    let (mut t, mut f) = (frames, coeffs);
    let mut pools = Vec::with_capacity(kernels.len());
    for (i, &k) in kernels.iter().enumerate() {
        if t < k || f < k {
            return too_small(i);
        }
        t -= k - 1;
        f -= k - 1;
        if t < 2 {
            return too_small(i);
        }
        t /= 2;
        let remaining: usize = kernels[i + 1..].iter().map(|k| k - 1).sum();
        let pf = if f / 2 > remaining { 2 } else { 1 };
        f /= pf;
        pools.push((2, pf));
    }
    Ok(pools)
}

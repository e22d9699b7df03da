use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, Signal, SignalError};
use crate::SAMPLE_RATE;

/// Sample encodings accepted on ingestion and produced by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Loads a PCM16 or float32 WAV, averages channels to mono, resamples to
/// 16 kHz and clamps to [-1, 1].
pub fn load_audio(path: impl AsRef<Path>) -> Result<Signal, SignalError> {
    let path = path.as_ref();
    let unreadable = |e: hound::Error| SignalError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => SignalError::UnsupportedEncoding {
            path: path.to_path_buf(),
            format: "unknown".into(),
            bits: 0,
        },
        other => unreadable(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(unreadable)?,
        (format, bits) => {
            return Err(SignalError::UnsupportedEncoding {
                path: path.to_path_buf(),
                format: format!("{format:?}"),
                bits,
            })
        }
    };
    if interleaved.len() < channels {
        return Err(SignalError::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    let mut samples = resample(&mono, spec.sample_rate, SAMPLE_RATE);
    if spec.sample_rate != SAMPLE_RATE || spec.sample_format == SampleFormat::Float {
        samples.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
    Ok(Signal::new(samples, SAMPLE_RATE))
}

/// Writes a mono WAV file. PCM16 output is clipped to [-1, 1).
pub fn write_wav(path: impl AsRef<Path>, s: &Signal, encoding: WavEncoding) -> Result<(), SignalError> {
    write_wav_channels(path, &[&s.samples], s.sample_rate, encoding)
}

/// Writes an interleaved multi-channel WAV from per-channel sample slices.
pub fn write_wav_channels(
    path: impl AsRef<Path>,
    channels: &[&[f64]],
    sample_rate: u32,
    encoding: WavEncoding,
) -> Result<(), SignalError> {
    let path = path.as_ref();
    let failed = |e: hound::Error| SignalError::WriteFailed {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels: channels.len() as u16,
            sample_rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: channels.len() as u16,
            sample_rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let len = channels.iter().map(|c| c.len()).min().unwrap_or(0);
    let mut w = WavWriter::create(path, spec).map_err(failed)?;
    for i in 0..len {
        for c in channels {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(v).map_err(failed)?;
                }
                WavEncoding::Float32 => w.write_sample(c[i] as f32).map_err(failed)?,
            }
        }
    }
    w.finalize().map_err(failed)
}

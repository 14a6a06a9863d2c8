//! WAV ingestion and emission. Only RIFF PCM, 16-bit signed little-endian,
//! mono at 16 kHz is accepted; everything else is rejected with a reason.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

use super::{Waveform, SAMPLE_RATE};

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedWav {
            path: path.into(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let reject = |reason: String| Error::UnsupportedWav {
        path: path.into(),
        reason,
    };
    if spec.channels != 1 {
        return Err(reject(format!(
            "expected mono audio, got {} channels",
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(reject(format!(
            "expected 16-bit signed PCM, got {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(reject(format!(
            "expected {SAMPLE_RATE} Hz (resampling is not supported), got {} Hz",
            spec.sample_rate
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples = samples.map_err(|e| reject(format!("malformed sample data: {e}")))?;
    if samples.is_empty() {
        return Err(reject("file contains no samples".into()));
    }
    let scaled = samples.iter().map(|&s| s as f64 / 32768.0).collect();
    Waveform::new(scaled, SAMPLE_RATE)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::invalid(other.to_string()),
    })?;
    for &s in w.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::invalid(format!("wav write failed: {e}")))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::invalid(format!("wav finalize failed: {e}")))?;
    Ok(())
}

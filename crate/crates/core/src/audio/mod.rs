//! Audio front-end: waveform/spectrogram types, STFT analysis, log-mel
//! features and Griffin-Lim inversion for listening checks.

mod griffin_lim;
mod mel;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim_invert, GriffinLim};
pub use mel::{mel_filterbank, mel_spectrogram, MelConfig, MelExtractor};
pub use stft::stft_magnitude;
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Mel bands per frame; fixed across the whole pipeline.
pub const NUM_MELS: usize = 80;

/// The only sample rate the pipeline accepts (resampling is out of scope).
pub const SAMPLE_RATE: u32 = 16_000;

/// Additive floor inside the log so silent frames stay finite.
pub const LOG_MEL_FLOOR: f64 = 1e-5;

/// Mono audio samples.
#[derive(Clone, Debug)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("waveform sample rate must be positive"));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Pointwise scaling (used by tests for the log-shift property).
    pub fn scaled(&self, alpha: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * alpha).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// `T×80` log-mel frames.
#[derive(Clone, Debug)]
pub struct MelSpectrogram {
    frames: Tensor,
    hop_ms: u32,
    win_ms: u32,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor) -> Result<Self> {
        Self::with_framing(frames, 16, 64)
    }

    pub fn with_framing(frames: Tensor, hop_ms: u32, win_ms: u32) -> Result<Self> {
        if frames.rank() != 2 || frames.cols() != NUM_MELS {
            return Err(Error::shape(format!(
                "mel spectrogram must be T×{NUM_MELS}, got {:?}",
                frames.shape()
            )));
        }
        if frames.rows() == 0 {
            return Err(Error::invalid("mel spectrogram has no frames"));
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite("mel spectrogram frames".into()));
        }
        Ok(MelSpectrogram {
            frames,
            hop_ms,
            win_ms,
        })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn hop_ms(&self) -> u32 {
        self.hop_ms
    }

    pub fn win_ms(&self) -> u32 {
        self.win_ms
    }

    /// Clone of the frame matrix (for feeding the network stack).
    pub fn to_tensor(&self) -> Tensor {
        self.frames.clone()
    }

    /// Contiguous frame range as a new spectrogram.
    pub fn crop(&self, start: usize, len: usize) -> Result<MelSpectrogram> {
        if len == 0 || start + len > self.num_frames() {
            return Err(Error::invalid(format!(
                "crop [{start}, {start}+{len}) out of range for {} frames",
                self.num_frames()
            )));
        }
        let mut out = Tensor::zeros(&[len, NUM_MELS]);
        for r in 0..len {
            out.row_mut(r).copy_from_slice(self.frames.row(start + r));
        }
        MelSpectrogram::with_framing(out, self.hop_ms, self.win_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_validation() {
        assert!(Waveform::new(vec![], 16_000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16_000).is_err());
        assert!(Waveform::new(vec![0.1, -0.2], 16_000).is_ok());
    }

    #[test]
    fn mel_type_enforces_shape_and_finiteness() {
        assert!(MelSpectrogram::new(Tensor::zeros(&[3, 40])).is_err());
        assert!(MelSpectrogram::new(Tensor::zeros(&[0, NUM_MELS])).is_err());
        let mut bad = Tensor::zeros(&[2, NUM_MELS]);
        bad.data_mut()[5] = f64::INFINITY;
        assert!(MelSpectrogram::new(bad).is_err());
        assert!(MelSpectrogram::new(Tensor::zeros(&[2, NUM_MELS])).is_ok());
    }
}

//! Short-time Fourier analysis and synthesis.
//!
//! Frames are taken fully inside the signal (no centering or padding), so
//! the frame count is exactly `1 + floor((N - win) / hop)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::Waveform;

pub(crate) struct StftEngine {
    pub win: usize,
    pub hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl StftEngine {
    pub fn new(win: usize, hop: usize) -> Result<Self> {
        if win < 2 {
            return Err(Error::invalid(format!("window of {win} samples is too small")));
        }
        if hop < 1 {
            return Err(Error::invalid("hop must be at least 1 sample"));
        }
        let mut planner = FftPlanner::new();
        Ok(StftEngine {
            win,
            hop,
            window: hann(win),
            fft: planner.plan_fft_forward(win),
            ifft: planner.plan_fft_inverse(win),
        })
    }

    pub fn bins(&self) -> usize {
        self.win / 2 + 1
    }

    pub fn num_frames(&self, samples: usize) -> Result<usize> {
        if samples < self.win {
            return Err(Error::SignalTooShort {
                len: samples,
                win: self.win,
            });
        }
        Ok(1 + (samples - self.win) / self.hop)
    }

    /// Complex spectra of all frames, `T` rows of `win/2+1` bins.
    pub fn forward(&self, samples: &[f64]) -> Result<Vec<Vec<Complex<f64>>>> {
        let t = self.num_frames(samples.len())?;
        let bins = self.bins();
        let mut out = Vec::with_capacity(t);
        let mut buf = vec![Complex::new(0.0, 0.0); self.win];
        for frame in 0..t {
            let start = frame * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..bins].to_vec());
        }
        Ok(out)
    }

    /// Windowed overlap-add synthesis with squared-window normalization.
    /// Output length is `(T-1)*hop + win`.
    pub fn inverse(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let t = spectra.len();
        assert!(t > 0, "istft of zero frames");
        let bins = self.bins();
        let out_len = (t - 1) * self.hop + self.win;
        let mut acc = vec![0.0f64; out_len];
        let mut wsum = vec![0.0f64; out_len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.win];
        for (frame, spec) in spectra.iter().enumerate() {
            assert_eq!(spec.len(), bins, "spectrum width mismatch");
            buf[..bins].copy_from_slice(spec);
            // Hermitian symmetry for the upper half.
            for k in bins..self.win {
                buf[k] = spec[self.win - k].conj();
            }
            self.ifft.process(&mut buf);
            let start = frame * self.hop;
            let scale = 1.0 / self.win as f64;
            for i in 0..self.win {
                let sample = buf[i].re * scale;
                acc[start + i] += sample * self.window[i];
                wsum[start + i] += self.window[i] * self.window[i];
            }
        }
        for (a, w) in acc.iter_mut().zip(&wsum) {
            *a /= w.max(1e-12);
        }
        acc
    }
}

fn hann(win: usize) -> Vec<f64> {
    (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
        .collect()
}

/// Magnitude spectrogram `T×(win/2+1)` with a Hann window per frame and no
/// padding; `T = 1 + floor((N - win)/hop)`.
pub fn stft_magnitude(w: &Waveform, win_samples: usize, hop_samples: usize) -> Result<Tensor> {
    let engine = StftEngine::new(win_samples, hop_samples)?;
    let spectra = engine.forward(w.samples())?;
    let bins = engine.bins();
    let mut out = Tensor::zeros(&[spectra.len(), bins]);
    for (r, spec) in spectra.iter().enumerate() {
        for (c, z) in spec.iter().enumerate() {
            out.set(r, c, z.norm());
        }
    }
    Ok(out)
}

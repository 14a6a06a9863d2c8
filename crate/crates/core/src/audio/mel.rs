//! Log-mel feature extraction: 80 area-normalized triangular filters over
//! 0–8 kHz applied to the power spectrum, then a floored natural log.

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::stft::StftEngine;
use super::{MelSpectrogram, Waveform, LOG_MEL_FLOOR, NUM_MELS};

#[derive(Clone, Debug)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win_ms: u32,
    pub hop_ms: u32,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: super::SAMPLE_RATE,
            win_ms: 64,
            hop_ms: 16,
            fmin: 0.0,
            fmax: 8_000.0,
        }
    }
}

impl MelConfig {
    pub fn win_samples(&self) -> usize {
        (self.sample_rate as usize * self.win_ms as usize) / 1000
    }

    pub fn hop_samples(&self) -> usize {
        (self.sample_rate as usize * self.hop_ms as usize) / 1000
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels + 2` mel-spaced points that define
/// the filter edges.
pub fn mel_points(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let lo = hz_to_mel(fmin);
    let hi = hz_to_mel(fmax);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank, `n_mels × (n_fft/2 + 1)`, each filter scaled by
/// `2 / (upper - lower)` so filters integrate to the same area.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Tensor {
    let bins = n_fft / 2 + 1;
    let pts = mel_points(n_mels, fmin, fmax);
    let mut fb = Tensor::zeros(&[n_mels, bins]);
    for m in 0..n_mels {
        let (lower, center, upper) = (pts[m], pts[m + 1], pts[m + 2]);
        let norm = 2.0 / (upper - lower);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f >= lower && f <= center && center > lower {
                (f - lower) / (center - lower)
            } else if f > center && f <= upper && upper > center {
                (upper - f) / (upper - center)
            } else {
                0.0
            };
            fb.set(m, k, w * norm);
        }
    }
    fb
}

/// Reusable analyzer: shared FFT plan plus the filterbank.
pub struct MelExtractor {
    cfg: MelConfig,
    engine: StftEngine,
    filters: Tensor,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let win = cfg.win_samples();
        let hop = cfg.hop_samples();
        let engine = StftEngine::new(win, hop)?;
        let filters = mel_filterbank(NUM_MELS, win, cfg.sample_rate, cfg.fmin, cfg.fmax);
        Ok(MelExtractor {
            cfg,
            engine,
            filters,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Tensor {
        &self.filters
    }

    /// Log-mel frames: `ln(filterbank · |STFT|² + floor)`.
    pub fn mel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate() != self.cfg.sample_rate {
            return Err(Error::invalid(format!(
                "waveform sample rate {} does not match extractor rate {}",
                w.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        let spectra = self.engine.forward(w.samples())?;
        let t = spectra.len();
        let bins = self.engine.bins();
        let mut frames = Tensor::zeros(&[t, NUM_MELS]);
        let mut power = vec![0.0f64; bins];
        for (r, spec) in spectra.iter().enumerate() {
            for (p, z) in power.iter_mut().zip(spec) {
                *p = z.norm_sqr();
            }
            let row = frames.row_mut(r);
            for m in 0..NUM_MELS {
                let frow = self.filters.row(m);
                let mut acc = 0.0;
                for (f, p) in frow.iter().zip(&power) {
                    acc += f * p;
                }
                row[m] = (acc + LOG_MEL_FLOOR).ln();
            }
        }
        MelSpectrogram::with_framing(frames, self.cfg.hop_ms, self.cfg.win_ms)
    }
}

/// One-shot helper with default configuration (16 kHz, 64 ms window,
/// 16 ms hop).
pub fn mel_spectrogram(w: &Waveform) -> Result<MelSpectrogram> {
    MelExtractor::new(MelConfig::default())?.mel(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let w = Waveform::new(vec![0.0; 16_000], SAMPLE_RATE).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        let expect = LOG_MEL_FLOOR.ln();
        assert!(m.frames().data().iter().all(|&v| v == expect));
    }

    #[test]
    fn tone_argmax_band_bracket_contains_the_tone() {
        // Oracle: recompute the band edges from the mel-scale formula and
        // check the winning band's support brackets 440 Hz.
        let w = sine(440.0, 0.5, 0.6);
        let m = mel_spectrogram(&w).unwrap();
        let pts = mel_points(NUM_MELS, 0.0, 8000.0);
        for r in 0..m.num_frames() {
            let row = m.frames().row(r);
            let argmax = (0..NUM_MELS)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            let lower = pts[argmax];
            let upper = pts[argmax + 2];
            assert!(
                lower <= 440.0 && 440.0 <= upper,
                "frame {r}: band {argmax} covers [{lower:.1}, {upper:.1}]"
            );
        }
    }

    #[test]
    fn frame_count_matches_formula_for_concatenation() {
        let a = sine(220.0, 0.13, 0.5);
        let b = sine(330.0, 0.21, 0.5);
        let mut samples = a.samples().to_vec();
        samples.extend_from_slice(b.samples());
        let total = Waveform::new(samples, SAMPLE_RATE).unwrap();
        let m = mel_spectrogram(&total).unwrap();
        let cfg = MelConfig::default();
        let expect = 1 + (total.len() - cfg.win_samples()) / cfg.hop_samples();
        assert_eq!(m.num_frames(), expect);
    }

    #[test]
    fn deterministic_bits() {
        let w = sine(523.25, 0.2, 0.4);
        let a = mel_spectrogram(&w).unwrap();
        let b = mel_spectrogram(&w).unwrap();
        assert!(a.frames().bits_eq(b.frames()));
    }

    #[test]
    fn amplitude_doubling_shifts_log_energy_by_two_log_two() {
        // Two tones so several bands carry energy well above the log floor.
        let mut samples = sine(440.0, 0.4, 0.4).samples().to_vec();
        for (i, s) in sine(1850.0, 0.4, 0.3).samples().iter().enumerate() {
            samples[i] += s;
        }
        let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
        let m1 = mel_spectrogram(&w).unwrap();
        let m2 = mel_spectrogram(&w.scaled(2.0)).unwrap();
        let shift = 2.0 * 2.0f64.ln();
        let mut checked = 0;
        for (a, b) in m1.frames().data().iter().zip(m2.frames().data()) {
            if *a > -6.0 {
                assert!(
                    (b - a - shift).abs() < 1e-2,
                    "entry {a} shifted by {}, expected {shift}",
                    b - a
                );
                checked += 1;
            }
        }
        assert!(checked > 50, "too few energetic entries ({checked})");
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let w = Waveform::new(vec![0.0; 50_000], 44_100).unwrap();
        assert!(mel_spectrogram(&w).is_err());
    }

    #[test]
    fn filterbank_rows_have_positive_mass_and_are_area_normalized() {
        let fb = mel_filterbank(NUM_MELS, 1024, SAMPLE_RATE, 0.0, 8000.0);
        let pts = mel_points(NUM_MELS, 0.0, 8000.0);
        for m in 0..NUM_MELS {
            let mass: f64 = fb.row(m).iter().sum();
            assert!(mass > 0.0, "band {m} has no coverage");
            // Triangle of height 2/(upper-lower): the discrete sum times the
            // bin width approximates area 1.
            let bin_hz = SAMPLE_RATE as f64 / 1024.0;
            let area = mass * bin_hz;
            let _ = (pts[m], area);
            assert!(area > 0.4 && area < 2.5, "band {m} area {area}");
        }
    }
}

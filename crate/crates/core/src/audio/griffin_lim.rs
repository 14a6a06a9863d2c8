//! Iterative phase reconstruction from log-mel spectrograms.
//!
//! Mel energies are mapped back to a linear power spectrum through the
//! filterbank pseudo-inverse (clamped at zero), then Griffin-Lim alternates
//! between the magnitude constraint and signal consistency.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul, matmul_nt, Tensor};

use super::mel::{mel_filterbank, MelConfig};
use super::stft::StftEngine;
use super::{MelSpectrogram, Waveform, LOG_MEL_FLOOR, NUM_MELS};

pub struct GriffinLim {
    cfg: MelConfig,
    engine: StftEngine,
    /// `(win/2+1) × 80` pseudo-inverse of the mel filterbank.
    pinv: Tensor,
}

impl GriffinLim {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        let win = cfg.win_samples();
        let hop = cfg.hop_samples();
        let engine = StftEngine::new(win, hop)?;
        let fb = mel_filterbank(NUM_MELS, win, cfg.sample_rate, cfg.fmin, cfg.fmax);
        let pinv = pseudo_inverse(&fb);
        Ok(GriffinLim { cfg, engine, pinv })
    }

    /// Invert a log-mel spectrogram into audio. Iterations alternate between
    /// imposing the target magnitudes and re-estimating phase; samples are
    /// clipped to [-1, 1].
    pub fn invert(&self, mel: &MelSpectrogram, iters: usize) -> Result<Waveform> {
        Ok(self.invert_with_trace(mel, iters)?.0)
    }

    /// Same as [`invert`], also returning the per-iteration spectral
    /// convergence error `‖|STFT(x)| − S‖_F / ‖S‖_F`.
    pub fn invert_with_trace(
        &self,
        mel: &MelSpectrogram,
        iters: usize,
    ) -> Result<(Waveform, Vec<f64>)> {
        if iters < 1 {
            return Err(Error::invalid("griffin-lim needs at least one iteration"));
        }
        if !mel.frames().all_finite() {
            return Err(Error::NonFinite("mel spectrogram".into()));
        }
        let target = self.mel_to_magnitude(mel);
        let t = target.rows();
        let bins = target.cols();
        let target_norm = frobenius(&target).max(1e-12);

        // Zero-phase start: treat the magnitudes as a real spectrum.
        let mut spectra: Vec<Vec<Complex<f64>>> = (0..t)
            .map(|r| target.row(r).iter().map(|&m| Complex::new(m, 0.0)).collect())
            .collect();
        let mut samples = self.engine.inverse(&spectra);
        let mut errors = Vec::with_capacity(iters);
        let _ = bins;
        for _ in 0..iters {
            let analyzed = self.engine.forward(&samples)?;
            let mut err_sq = 0.0;
            for (r, row) in analyzed.iter().enumerate() {
                for (c, z) in row.iter().enumerate() {
                    let d = z.norm() - target.at(r, c);
                    err_sq += d * d;
                }
            }
            errors.push(err_sq.sqrt() / target_norm);
            // Keep the estimated phase, impose the target magnitude.
            for (r, row) in analyzed.iter().enumerate() {
                for (c, z) in row.iter().enumerate() {
                    let mag = z.norm();
                    let phase = if mag > 1e-300 { z / mag } else { Complex::new(1.0, 0.0) };
                    spectra[r][c] = phase * target.at(r, c);
                }
            }
            samples = self.engine.inverse(&spectra);
        }
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        let wave = Waveform::new(samples, self.cfg.sample_rate)?;
        Ok((wave, errors))
    }

    /// Map log-mel frames to linear magnitudes via the clamped pseudo-inverse.
    fn mel_to_magnitude(&self, mel: &MelSpectrogram) -> Tensor {
        let t = mel.num_frames();
        // Undo the log (floor removed, clamped at zero energy).
        let mut energies = Tensor::zeros(&[t, NUM_MELS]);
        for r in 0..t {
            for (c, &v) in mel.frames().row(r).iter().enumerate() {
                energies.set(r, c, (v.exp() - LOG_MEL_FLOOR).max(0.0));
            }
        }
        // power[t, k] = Σ_m pinv[k, m] energies[t, m]  =>  energies · pinvᵀ
        let power = matmul_nt(&energies, &self.pinv);
        let mut mag = Tensor::zeros(&[t, self.engine.bins()]);
        for r in 0..t {
            for c in 0..self.engine.bins() {
                mag.set(r, c, power.at(r, c).max(0.0).sqrt());
            }
        }
        mag
    }
}

fn frobenius(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Moore-Penrose pseudo-inverse of a wide full-row-rank matrix via the normal
/// equations: `M⁺ = Mᵀ (M Mᵀ)⁻¹`.
fn pseudo_inverse(m: &Tensor) -> Tensor {
    let gram = matmul_nt(m, m); // n_mels × n_mels
    let inv = invert_spd(&gram);
    matmul(&m.transposed(), &inv)
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
fn invert_spd(a: &Tensor) -> Tensor {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut aug = Tensor::zeros(&[n, 2 * n]);
    for i in 0..n {
        for j in 0..n {
            aug.set(i, j, a.at(i, j));
        }
        aug.set(i, n + i, 1.0);
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if aug.at(r, col).abs() > aug.at(pivot, col).abs() {
                pivot = r;
            }
        }
        assert!(aug.at(pivot, col).abs() > 1e-12, "filterbank gram matrix is singular");
        if pivot != col {
            for j in 0..2 * n {
                let tmp = aug.at(col, j);
                aug.set(col, j, aug.at(pivot, j));
                aug.set(pivot, j, tmp);
            }
        }
        let p = aug.at(col, col);
        for j in 0..2 * n {
            aug.set(col, j, aug.at(col, j) / p);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = aug.at(r, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                let v = aug.at(r, j) - factor * aug.at(col, j);
                aug.set(r, j, v);
            }
        }
    }
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, aug.at(i, n + j));
        }
    }
    out
}

/// Convenience: default-configuration inversion.
pub fn griffin_lim_invert(mel: &MelSpectrogram, iters: usize) -> Result<Waveform> {
    GriffinLim::new(MelConfig::default())?.invert(mel, iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::mel::mel_spectrogram;
    use crate::audio::SAMPLE_RATE;

    fn sine(freq: f64, secs: f64, amp: f64) -> Waveform {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn silence_inverts_to_near_silence() {
        let floor = LOG_MEL_FLOOR.ln();
        let mel = MelSpectrogram::new(Tensor::filled(&[20, NUM_MELS], floor)).unwrap();
        let wav = griffin_lim_invert(&mel, 3).unwrap();
        let peak = wav.samples().iter().fold(0.0f64, |m, &s| m.max(s.abs()));
        assert!(peak < 1e-3, "peak {peak}");
    }

    #[test]
    fn spectral_error_decreases_over_first_ten_iterations() {
        let mel = mel_spectrogram(&sine(440.0, 0.4, 0.5)).unwrap();
        let gl = GriffinLim::new(MelConfig::default()).unwrap();
        let (_, errors) = gl.invert_with_trace(&mel, 10).unwrap();
        for w in errors.windows(2) {
            assert!(w[1] < w[0], "errors not decreasing: {errors:?}");
        }
    }

    #[test]
    fn more_iterations_get_closer_to_the_input_mel() {
        // Speech-like synthetic input: two tones in sequence.
        let mut samples = sine(220.0, 0.25, 0.5).samples().to_vec();
        samples.extend_from_slice(sine(550.0, 0.25, 0.4).samples());
        let w = Waveform::new(samples, SAMPLE_RATE).unwrap();
        let mel = mel_spectrogram(&w).unwrap();
        let gl = GriffinLim::new(MelConfig::default()).unwrap();

        // Distance in the linear mel-energy domain (the quantity the
        // iteration actually refines; the log floor dominates silent bands).
        let distance = |iters: usize| {
            let wav = gl.invert(&mel, iters).unwrap();
            let back = mel_spectrogram(&wav).unwrap();
            let t = back.num_frames().min(mel.num_frames());
            let mut acc = 0.0;
            let mut norm = 0.0;
            for r in 0..t {
                for c in 0..NUM_MELS {
                    let e_ref = mel.frames().at(r, c).exp();
                    let e_back = back.frames().at(r, c).exp();
                    acc += (e_back - e_ref) * (e_back - e_ref);
                    norm += e_ref * e_ref;
                }
            }
            (acc / norm).sqrt()
        };
        let d1 = distance(1);
        let d50 = distance(50);
        assert!(d50 < d1, "iters=50 ({d50}) not better than iters=1 ({d1})");
    }

    #[test]
    fn zero_iterations_rejected() {
        let mel = MelSpectrogram::new(Tensor::zeros(&[4, NUM_MELS])).unwrap();
        assert!(griffin_lim_invert(&mel, 0).is_err());
    }

    #[test]
    fn output_length_matches_overlap_add() {
        let mel = mel_spectrogram(&sine(330.0, 0.3, 0.5)).unwrap();
        let wav = griffin_lim_invert(&mel, 2).unwrap();
        let cfg = MelConfig::default();
        let expect = (mel.num_frames() - 1) * cfg.hop_samples() + cfg.win_samples();
        assert_eq!(wav.len(), expect);
        assert!(wav.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
    }

    #[test]
    fn pseudo_inverse_is_a_right_inverse_on_the_filter_span() {
        let fb = mel_filterbank(NUM_MELS, 1024, SAMPLE_RATE, 0.0, 8000.0);
        let pinv = pseudo_inverse(&fb);
        let prod = matmul(&fb, &pinv); // n_mels × n_mels ≈ I
        for i in 0..NUM_MELS {
            for j in 0..NUM_MELS {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (prod.at(i, j) - expect).abs() < 1e-8,
                    "M·M⁺ at ({i},{j}) = {}",
                    prod.at(i, j)
                );
            }
        }
    }
}

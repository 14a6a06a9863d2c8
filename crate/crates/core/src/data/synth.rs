//! Synthetic two-factor corpus: speaker identity and linguistic content are
//! independent by construction.
//!
//! Each speaker is a fixed spectral envelope with two formant-like resonance
//! peaks; each utterance is a sequence of harmonic tones whose fundamentals
//! follow a 12-symbol content alphabet on a log grid from 110 to 440 Hz,
//! filtered by the speaker's envelope. Speaker factors and content sequences
//! come from separate derived random streams, so regenerating with more
//! speakers or more utterances never perturbs existing ones.

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::{derived, uniform, uniform_range};

use super::{assign_splits, Corpus, Speaker, Split, SplitConfig, Utterance};

/// Content alphabet size.
pub const NUM_SYMBOLS: u8 = 12;

const STREAM_SPEAKER: u64 = 0x51;
const STREAM_CONTENT: u64 = 0xC0;

/// Fundamental frequency of a content symbol: 110 Hz to 440 Hz on a log grid.
pub fn fundamental_hz(symbol: u8) -> f64 {
    assert!(symbol < NUM_SYMBOLS, "symbol out of alphabet");
    110.0 * 4f64.powf(symbol as f64 / (NUM_SYMBOLS - 1) as f64)
}

/// Per-speaker spectral envelope: two resonance peaks plus a global tilt.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerFactors {
    pub peaks: [f64; 2],
    pub bandwidths: [f64; 2],
    pub gains: [f64; 2],
    pub tilt: f64,
}

/// Deterministic speaker factors, independent of every other stream.
pub fn speaker_factors(seed: u64, speaker_idx: usize) -> SpeakerFactors {
    let mut rng = derived(seed, &[STREAM_SPEAKER, speaker_idx as u64]);
    let p1 = 500.0 * (3000.0f64 / 500.0).powf(uniform(&mut rng, 0.0, 1.0));
    let p2 = 3500.0 * (7400.0f64 / 3500.0).powf(uniform(&mut rng, 0.0, 1.0));
    SpeakerFactors {
        peaks: [p1, p2],
        bandwidths: [uniform(&mut rng, 150.0, 500.0), uniform(&mut rng, 200.0, 600.0)],
        gains: [uniform(&mut rng, 0.6, 1.2), uniform(&mut rng, 0.6, 1.2)],
        tilt: uniform(&mut rng, -1.0, 1.0),
    }
}

/// Envelope amplitude at a frequency (linear scale).
pub fn envelope_amplitude(f: &SpeakerFactors, freq: f64) -> f64 {
    let mut amp = 0.05;
    for r in 0..2 {
        let x = (freq - f.peaks[r]) / f.bandwidths[r];
        amp += f.gains[r] / (1.0 + x * x);
    }
    amp * 2f64.powf(f.tilt * freq / 4000.0)
}

/// Content of one utterance: symbols plus per-segment lengths in samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentSeq {
    pub symbols: Vec<u8>,
    pub segment_samples: Vec<usize>,
}

impl ContentSeq {
    pub fn total_samples(&self) -> usize {
        self.segment_samples.iter().sum()
    }
}

/// Deterministic content draw for `(speaker_idx, utt_idx)`; depends only on
/// the content stream, never on speaker factors.
pub fn content_seq(seed: u64, speaker_idx: usize, utt_idx: usize) -> ContentSeq {
    let mut rng = derived(seed, &[STREAM_CONTENT, speaker_idx as u64, utt_idx as u64]);
    let n_segments = uniform_range(&mut rng, 5, 16);
    let symbols: Vec<u8> = (0..n_segments)
        .map(|_| uniform_range(&mut rng, 0, NUM_SYMBOLS as usize) as u8)
        .collect();
    let raw: Vec<f64> = (0..n_segments).map(|_| uniform(&mut rng, 0.5, 1.5)).collect();
    let raw_total: f64 = raw.iter().sum();
    let target_secs = uniform(&mut rng, 1.0, 3.0);
    let segment_samples = raw
        .iter()
        .map(|&r| ((r / raw_total) * target_secs * SAMPLE_RATE as f64).round() as usize)
        .map(|s| s.max(400))
        .collect();
    ContentSeq {
        symbols,
        segment_samples,
    }
}

/// Render a content sequence through a speaker envelope: a sum of harmonics
/// up to 7.8 kHz, each weighted by the envelope at its frequency, peak
/// normalized to 0.5.
pub fn render_utterance(factors: &SpeakerFactors, content: &ContentSeq) -> Result<Waveform> {
    let total = content.total_samples();
    let mut samples = vec![0.0f64; total];
    let sr = SAMPLE_RATE as f64;
    let mut offset = 0usize;
    for (sym, &seg_len) in content.symbols.iter().zip(&content.segment_samples) {
        let f0 = fundamental_hz(*sym);
        let max_harmonic = (7800.0 / f0).floor() as usize;
        let harmonics: Vec<(f64, f64)> = (1..=max_harmonic)
            .map(|h| {
                let freq = h as f64 * f0;
                let amp = envelope_amplitude(factors, freq) / (h as f64).sqrt();
                (freq, amp)
            })
            .collect();
        for i in 0..seg_len {
            let t = (offset + i) as f64 / sr;
            let mut v = 0.0;
            for &(freq, amp) in &harmonics {
                v += amp * (2.0 * std::f64::consts::PI * freq * t).sin();
            }
            samples[offset + i] = v;
        }
        offset += seg_len;
    }
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs())).max(1e-9);
    let scale = 0.5 / peak;
    for s in &mut samples {
        *s *= scale;
    }
    Waveform::new(samples, SAMPLE_RATE)
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
    pub split: SplitConfig,
}

impl SynthConfig {
    /// Desk defaults: no unseen speakers, a quarter of each speaker's
    /// utterances held out for evaluation.
    pub fn new(num_speakers: usize, utts_per_speaker: usize, seed: u64) -> Self {
        SynthConfig {
            num_speakers,
            utts_per_speaker,
            seed,
            split: SplitConfig {
                held_out_speakers: 0,
                eval_fraction: 0.25,
                seed,
            },
        }
    }
}

/// Generate the synthetic corpus.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    if cfg.num_speakers < 2 {
        return Err(Error::invalid(format!(
            "synthetic corpus needs at least 2 speakers, got {}",
            cfg.num_speakers
        )));
    }
    if cfg.utts_per_speaker < 2 {
        return Err(Error::invalid(format!(
            "synthetic corpus needs at least 2 utterances per speaker, got {}",
            cfg.utts_per_speaker
        )));
    }
    let mut speakers = Vec::with_capacity(cfg.num_speakers);
    for s in 0..cfg.num_speakers {
        let factors = speaker_factors(cfg.seed, s);
        let mut utterances = Vec::with_capacity(cfg.utts_per_speaker);
        for u in 0..cfg.utts_per_speaker {
            let content = content_seq(cfg.seed, s, u);
            let wave = render_utterance(&factors, &content)?;
            utterances.push(Utterance {
                wave,
                split: Split::Train,
                symbols: Some(content.symbols.clone()),
                path: None,
            });
        }
        speakers.push(Speaker {
            id: format!("s{s:02}"),
            seen: true,
            utterances,
        });
    }
    assign_splits(&mut speakers, &cfg.split)?;
    Ok(Corpus { speakers })
}

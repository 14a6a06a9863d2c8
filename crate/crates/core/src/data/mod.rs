//! Corpora: on-disk ingestion (one directory per speaker), the synthetic
//! two-factor corpus, deterministic train/eval splits and triple sampling.

pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::audio::{read_wav, write_wav, MelConfig, MelExtractor, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::rng::{derived, uniform_usize, weighted_choice, Rng};

pub use synth::{synth_corpus, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Utterance {
    pub wave: Waveform,
    pub split: Split,
    /// Content-symbol sequence, present for synthetic corpora.
    pub symbols: Option<Vec<u8>>,
    /// Source file, present for corpora loaded from disk.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Speaker {
    pub id: String,
    /// Seen speakers participate in training; unseen speakers are reserved
    /// entirely for evaluation.
    pub seen: bool,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub speakers: Vec<Speaker>,
}

impl Corpus {
    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn seen_speaker_indices(&self) -> Vec<usize> {
        (0..self.speakers.len()).filter(|&s| self.speakers[s].seen).collect()
    }

    pub fn train_utterances_of(&self, speaker: usize) -> Vec<usize> {
        self.speakers[speaker]
            .utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.split == Split::Train)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn eval_utterances_of(&self, speaker: usize) -> Vec<usize> {
        self.speakers[speaker]
            .utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.split == Split::Eval)
            .map(|(i, _)| i)
            .collect()
    }

    /// Requirements of the conversion trainer: at least two seen speakers,
    /// each with at least two train-split utterances.
    pub fn validate_for_training(&self) -> Result<()> {
        let seen = self.seen_speaker_indices();
        if seen.len() < 2 {
            return Err(Error::Corpus(format!(
                "training needs at least 2 seen speakers, found {}",
                seen.len()
            )));
        }
        for &s in &seen {
            let m = self.train_utterances_of(s).len();
            if m < 2 {
                return Err(Error::Corpus(format!(
                    "speaker {} has {m} train utterances, need at least 2",
                    self.speakers[s].id
                )));
            }
        }
        Ok(())
    }

    /// Write the corpus as WAV trees plus a tab-separated manifest
    /// (`path<TAB>speaker<TAB>symbols`, paths relative to the root so equal
    /// corpora materialize byte-identically anywhere).
    pub fn materialize(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut manifest = String::new();
        for spk in &self.speakers {
            let dir = root.join(&spk.id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, utt) in spk.utterances.iter().enumerate() {
                let rel = format!("{}/utt{i:03}.wav", spk.id);
                write_wav(dir.join(format!("utt{i:03}.wav")), &utt.wave)?;
                let symbols = utt
                    .symbols
                    .as_ref()
                    .map(|s| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
                    .unwrap_or_default();
                manifest.push_str(&format!("{rel}\t{}\t{}\n", spk.id, symbols));
            }
        }
        let mpath = root.join("manifest.tsv");
        std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }
}

/// Precomputed log-mel features for every utterance of a corpus.
pub struct MelSet {
    mels: Vec<Vec<MelSpectrogram>>,
}

impl MelSet {
    pub fn compute(corpus: &Corpus) -> Result<MelSet> {
        let extractor = MelExtractor::new(MelConfig::default())?;
        let mut mels = Vec::with_capacity(corpus.speakers.len());
        for spk in &corpus.speakers {
            let mut per = Vec::with_capacity(spk.utterances.len());
            for utt in &spk.utterances {
                per.push(extractor.mel(&utt.wave)?);
            }
            mels.push(per);
        }
        Ok(MelSet { mels })
    }

    pub fn get(&self, speaker: usize, utt: usize) -> &MelSpectrogram {
        &self.mels[speaker][utt]
    }
}

/// Train/eval split policy.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    /// Speakers reserved entirely for evaluation (unseen set).
    pub held_out_speakers: usize,
    /// Fraction of each seen speaker's utterances held out for evaluation.
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            held_out_speakers: 10,
            eval_fraction: 0.10,
            seed: 0,
        }
    }
}

pub(crate) fn assign_splits(speakers: &mut [Speaker], cfg: &SplitConfig) -> Result<()> {
    if !(0.0..1.0).contains(&cfg.eval_fraction) {
        return Err(Error::invalid(format!(
            "eval_fraction must be in [0, 1), got {}",
            cfg.eval_fraction
        )));
    }
    if cfg.held_out_speakers >= speakers.len() {
        return Err(Error::Corpus(format!(
            "cannot hold out {} of {} speakers",
            cfg.held_out_speakers,
            speakers.len()
        )));
    }
    let mut rng = derived(cfg.seed, &[0x5b11, cfg.held_out_speakers as u64]);
    // Unseen speakers: a seeded draw without replacement.
    let mut pool: Vec<usize> = (0..speakers.len()).collect();
    for _ in 0..cfg.held_out_speakers {
        let pick = uniform_usize(&mut rng, pool.len());
        let idx = pool.swap_remove(pick);
        speakers[idx].seen = false;
        for u in &mut speakers[idx].utterances {
            u.split = Split::Eval;
        }
    }
    for spk in speakers.iter_mut().filter(|s| s.seen) {
        let m = spk.utterances.len();
        let k = (m as f64 * cfg.eval_fraction).floor() as usize;
        if m.saturating_sub(k) < 2 {
            return Err(Error::Corpus(format!(
                "speaker {} would keep {} train utterances after holdout, need at least 2",
                spk.id,
                m.saturating_sub(k)
            )));
        }
        let mut pool: Vec<usize> = (0..m).collect();
        for _ in 0..k {
            let pick = uniform_usize(&mut rng, pool.len());
            let utt = pool.swap_remove(pick);
            spk.utterances[utt].split = Split::Eval;
        }
    }
    Ok(())
}

/// Result of loading a directory tree: the corpus plus every rejected file
/// with its reason.
pub struct LoadOutcome {
    pub corpus: Corpus,
    pub rejected: Vec<(PathBuf, String)>,
}

/// Load a `root/speaker_id/*.wav` tree. Ordering is lexicographic, the split
/// is seeded by the config, and non-conforming files are reported rather
/// than silently skipped.
pub fn load_corpus(root: impl AsRef<Path>, split: &SplitConfig) -> Result<LoadOutcome> {
    let root = root.as_ref();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut speaker_dirs: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut rejected: Vec<(PathBuf, String)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            speaker_dirs.insert(entry.file_name().to_string_lossy().into_owned(), path);
        } else if path.file_name().map(|n| n != "manifest.tsv").unwrap_or(true) {
            rejected.push((path, "not a speaker directory".into()));
        }
    }
    if speaker_dirs.is_empty() {
        return Err(Error::Corpus(format!(
            "no speakers found under {}",
            root.display()
        )));
    }

    let mut speakers = Vec::new();
    for (id, dir) in speaker_dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        let mut utterances = Vec::new();
        for path in files {
            if path.extension().map(|e| e != "wav").unwrap_or(true) {
                rejected.push((path, "not a .wav file".into()));
                continue;
            }
            match read_wav(&path) {
                Ok(wave) => utterances.push(Utterance {
                    wave,
                    split: Split::Train,
                    symbols: None,
                    path: Some(path),
                }),
                Err(e) => rejected.push((path, e.to_string())),
            }
        }
        if utterances.is_empty() {
            rejected.push((dir, format!("speaker {id} has no loadable utterances")));
            continue;
        }
        speakers.push(Speaker {
            id,
            seen: true,
            utterances,
        });
    }
    if speakers.is_empty() {
        return Err(Error::Corpus(format!(
            "no loadable speakers under {}",
            root.display()
        )));
    }
    assign_splits(&mut speakers, split)?;
    let corpus = Corpus { speakers };
    for &s in &corpus.seen_speaker_indices() {
        if corpus.train_utterances_of(s).len() < 2 {
            return Err(Error::Corpus(format!(
                "speaker {} has fewer than 2 train utterances",
                corpus.speakers[s].id
            )));
        }
    }
    Ok(LoadOutcome { corpus, rejected })
}

/// One sampled training triple (indices into the corpus).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripleIndices {
    pub speaker_a: usize,
    pub utt_i: usize,
    pub utt_j: usize,
    pub speaker_b: usize,
    pub utt_b: usize,
}

/// Uniform sampler over all valid train triples `(x_iA, x_jA, x_B)` with
/// `i ≠ j` and `speaker(x_B) ≠ A`. State is explicit so independent samplers
/// never share hidden state.
pub struct TripleSampler {
    rng: Rng,
}

impl TripleSampler {
    pub fn new(seed: u64) -> Self {
        TripleSampler {
            rng: derived(seed, &[0x7219]),
        }
    }

    pub fn sample(&mut self, corpus: &Corpus) -> Result<TripleIndices> {
        corpus.validate_for_training()?;
        let seen = corpus.seen_speaker_indices();
        let counts: Vec<usize> = seen.iter().map(|&s| corpus.train_utterances_of(s).len()).collect();
        let total: usize = counts.iter().sum();
        // Exact-uniform speaker choice: weight by the number of triples the
        // speaker heads: m(m-1) ordered same-speaker pairs times the other
        // speakers' utterances.
        let weights: Vec<f64> = counts
            .iter()
            .map(|&m| (m * (m - 1) * (total - m)) as f64)
            .collect();
        let a_pos = weighted_choice(&mut self.rng, &weights);
        let speaker_a = seen[a_pos];
        let a_utts = corpus.train_utterances_of(speaker_a);
        let m = a_utts.len();
        let i_pos = uniform_usize(&mut self.rng, m);
        let mut j_pos = uniform_usize(&mut self.rng, m - 1);
        if j_pos >= i_pos {
            j_pos += 1;
        }
        // x_B: uniform over every train utterance of the other seen speakers.
        let other_total = total - m;
        let mut pick = uniform_usize(&mut self.rng, other_total);
        for (pos, &s) in seen.iter().enumerate() {
            if s == speaker_a {
                continue;
            }
            let mb = counts[pos];
            if pick < mb {
                let b_utts = corpus.train_utterances_of(s);
                return Ok(TripleIndices {
                    speaker_a,
                    utt_i: a_utts[i_pos],
                    utt_j: a_utts[j_pos],
                    speaker_b: s,
                    utt_b: b_utts[pick],
                });
            }
            pick -= mb;
        }
        unreachable!("weighted pick out of range");
    }
}

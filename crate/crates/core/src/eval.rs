//! Objective evaluation: probe classifiers measuring residual speaker
//! information in embeddings, speaker recognition of conversion outputs, and
//! embedding-similarity comparisons.

use crate::data::{Corpus, MelSet, Split};
use crate::error::{Error, Result};
use crate::model::VoiceModel;
use crate::nn::{Adam, AdamConfig, ParamKind, ParamStore, Tape, Tensor};
use crate::rng::{derived, uniform_usize};
use crate::speaker::cosine;

/// Probe accuracy next to its chance floor.
#[derive(Clone, Copy, Debug)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub chance: f64,
    pub num_eval: usize,
}

impl ProbeReport {
    pub fn summary(&self, name: &str) -> String {
        format!(
            "{name}_accuracy = {:.4}\n{name}_chance = {:.4}\n{name}_num_eval = {}\n",
            self.accuracy, self.chance, self.num_eval
        )
    }
}

/// Linear softmax classifier trained on frozen features.
pub struct Probe {
    w: Tensor, // F×C
    b: Tensor, // C
    pub num_classes: usize,
}

impl Probe {
    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let c = self.num_classes;
        let mut out = self.b.data().to_vec();
        for (i, &x) in feature.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(self.w.row(i)) {
                *o += x * wv;
            }
        }
        let _ = c;
        out
    }

    pub fn predict(&self, feature: &[f64]) -> usize {
        let logits = self.logits(feature);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 500,
            learning_rate: 0.05,
        }
    }
}

/// Train a linear probe with full-batch updates from zero initialization
/// (the objective is convex, so this is deterministic without a seed).
pub fn train_probe(
    samples: &[(Vec<f64>, usize)],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<Probe> {
    if samples.is_empty() {
        return Err(Error::invalid("probe training set is empty"));
    }
    let feat_dim = samples[0].0.len();
    if samples.iter().any(|(f, _)| f.len() != feat_dim) {
        return Err(Error::shape("probe features ragged"));
    }
    let mut classes_present = vec![false; num_classes];
    for (_, y) in samples {
        if *y >= num_classes {
            return Err(Error::invalid(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        classes_present[*y] = true;
    }
    if classes_present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid(
            "probe training needs at least two distinct classes",
        ));
    }

    let mut features = Tensor::zeros(&[samples.len(), feat_dim]);
    let mut labels = Vec::with_capacity(samples.len());
    for (r, (f, y)) in samples.iter().enumerate() {
        features.row_mut(r).copy_from_slice(f);
        labels.push(*y);
    }

    let mut store = ParamStore::new();
    let w = store.register("probe.w", Tensor::zeros(&[feat_dim, num_classes]), ParamKind::Weight);
    let b = store.register("probe.b", Tensor::zeros(&[num_classes]), ParamKind::Weight);
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        &[],
    );
    for _ in 0..cfg.steps {
        store.zero_grads();
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let wv = tape.bind_param(&store, w, true);
        let bv = tape.bind_param(&store, b, true);
        let scores = tape.matmul_op(x, wv);
        let scores = tape.add_bias(scores, bv);
        let loss = tape.softmax_cross_entropy(scores, &labels);
        let grads = tape.backward(loss);
        tape.accumulate_param_grads(&mut store, &grads);
        adam.step(&mut store);
    }
    Ok(Probe {
        w: store.entry(w).value.clone(),
        b: store.entry(b).value.clone(),
        num_classes,
    })
}

/// Held-out accuracy of a trained probe.
pub fn probe_accuracy(probe: &Probe, eval: &[(Vec<f64>, usize)]) -> Result<ProbeReport> {
    if eval.is_empty() {
        return Err(Error::invalid("probe evaluation set is empty"));
    }
    let correct = eval
        .iter()
        .filter(|(f, y)| probe.predict(f) == *y)
        .count();
    Ok(ProbeReport {
        accuracy: correct as f64 / eval.len() as f64,
        chance: 1.0 / probe.num_classes as f64,
        num_eval: eval.len(),
    })
}

/// Train on the train split, report on the eval split.
pub fn run_probe(
    train: &[(Vec<f64>, usize)],
    eval: &[(Vec<f64>, usize)],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(Probe, ProbeReport)> {
    let probe = train_probe(train, num_classes, cfg)?;
    let report = probe_accuracy(&probe, eval)?;
    Ok((probe, report))
}

/// Labeled features of seen-speaker utterances, one entry per utterance of
/// the requested split. Labels index the seen-speaker list.
pub fn feature_split<F>(
    corpus: &Corpus,
    split: Split,
    mut extract: F,
) -> Result<Vec<(Vec<f64>, usize)>>
where
    F: FnMut(usize, usize) -> Result<Vec<f64>>,
{
    let seen = corpus.seen_speaker_indices();
    let mut out = Vec::new();
    for (label, &spk) in seen.iter().enumerate() {
        let utts = match split {
            Split::Train => corpus.train_utterances_of(spk),
            Split::Eval => corpus.eval_utterances_of(spk),
        };
        for utt in utts {
            out.push((extract(spk, utt)?, label));
        }
    }
    Ok(out)
}

/// Speaker-encoder embeddings as probe features.
pub fn speaker_embedding_features(
    model: &VoiceModel,
    corpus: &Corpus,
    mels: &MelSet,
    split: Split,
) -> Result<Vec<(Vec<f64>, usize)>> {
    feature_split(corpus, split, |spk, utt| {
        Ok(model.embed_utterance(mels.get(spk, utt))?.as_slice().to_vec())
    })
}

/// Time-averaged content codes as probe features (each utterance encoded
/// under its own speaker's identity).
pub fn content_embedding_features(
    model: &VoiceModel,
    corpus: &Corpus,
    mels: &MelSet,
    split: Split,
) -> Result<Vec<(Vec<f64>, usize)>> {
    feature_split(corpus, split, |spk, utt| {
        let mel = mels.get(spk, utt);
        let emb = model.embed_utterance(mel)?;
        Ok(model.encode_content(mel, &emb)?.mean_pooled())
    })
}

/// Raw per-utterance mean log-mel vectors (sanity features: the corpus
/// factors must be learnable from these).
pub fn raw_mel_mean_features(
    corpus: &Corpus,
    mels: &MelSet,
    split: Split,
) -> Result<Vec<(Vec<f64>, usize)>> {
    feature_split(corpus, split, |spk, utt| {
        let m = mels.get(spk, utt);
        let t = m.num_frames();
        let mut mean = vec![0.0; crate::audio::NUM_MELS];
        for r in 0..t {
            for (acc, &v) in mean.iter_mut().zip(m.frames().row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= t as f64);
        Ok(mean)
    })
}

/// One conversion trial.
#[derive(Clone, Debug)]
pub struct ConversionPair {
    pub source_speaker: usize,
    pub target_speaker: usize,
    pub cos_source: f64,
    pub cos_target: f64,
    pub classified_as_target: bool,
}

/// Conversion-direction evaluation over held-out sources.
#[derive(Clone, Debug)]
pub struct ConversionOutcome {
    pub report: ProbeReport,
    pub pairs: Vec<ConversionPair>,
    /// Fraction of pairs whose converted embedding is closer to the target
    /// reference than to the source utterance.
    pub fraction_target_closer: f64,
}

impl ConversionOutcome {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("source_speaker\ttarget_speaker\tcos_source\tcos_target\ttarget_won\tclassified_as_target\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
                p.source_speaker,
                p.target_speaker,
                p.cos_source,
                p.cos_target,
                (p.cos_target > p.cos_source) as u8,
                p.classified_as_target as u8
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{}conversion_fraction_target_closer = {:.4}\nconversion_num_pairs = {}\n",
            self.report.summary("conversion_target"),
            self.fraction_target_closer,
            self.pairs.len()
        )
    }
}

#[derive(Clone, Debug)]
pub struct ConversionEvalConfig {
    /// Distinct target speakers drawn per held-out source utterance.
    pub targets_per_source: usize,
    pub seed: u64,
    pub probe: ProbeConfig,
}

impl Default for ConversionEvalConfig {
    fn default() -> Self {
        ConversionEvalConfig {
            targets_per_source: 3,
            seed: 0,
            probe: ProbeConfig::default(),
        }
    }
}

/// Convert held-out utterances towards other speakers, then check (a) a
/// speaker probe trained on real utterances classifies the conversions as
/// their targets and (b) converted embeddings sit closer to the target
/// reference than to the source.
pub fn evaluate_conversion(
    model: &VoiceModel,
    corpus: &Corpus,
    mels: &MelSet,
    cfg: &ConversionEvalConfig,
) -> Result<ConversionOutcome> {
    let seen = corpus.seen_speaker_indices();
    if seen.len() < 2 {
        return Err(Error::invalid("conversion evaluation needs 2+ seen speakers"));
    }
    let train_feats = speaker_embedding_features(model, corpus, mels, Split::Train)?;
    let probe = train_probe(&train_feats, seen.len(), &cfg.probe)?;

    let mut rng = derived(cfg.seed, &[0xE7A1]);
    let mut pairs = Vec::new();
    for (source_label, &spk) in seen.iter().enumerate() {
        for utt in corpus.eval_utterances_of(spk) {
            let source_mel = mels.get(spk, utt);
            let source_emb = model.embed_utterance(source_mel)?;
            // Distinct targets, excluding the source speaker.
            let mut pool: Vec<usize> = (0..seen.len()).filter(|&l| l != source_label).collect();
            let picks = cfg.targets_per_source.min(pool.len());
            for _ in 0..picks {
                let target_label = pool.swap_remove(uniform_usize(&mut rng, pool.len()));
                let target_spk = seen[target_label];
                let refs = corpus.train_utterances_of(target_spk);
                if refs.is_empty() {
                    return Err(Error::invalid("target speaker has no train utterances"));
                }
                let reference = refs[uniform_usize(&mut rng, refs.len())];
                let target_emb = model.embed_utterance(mels.get(target_spk, reference))?;
                let converted = model.convert(source_mel, &source_emb, &target_emb)?;
                let converted_emb = model.embed_utterance(&converted)?;
                let predicted = probe.predict(converted_emb.as_slice());
                pairs.push(ConversionPair {
                    source_speaker: spk,
                    target_speaker: target_spk,
                    cos_source: cosine(converted_emb.as_slice(), source_emb.as_slice()),
                    cos_target: cosine(converted_emb.as_slice(), target_emb.as_slice()),
                    classified_as_target: predicted == target_label,
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs (empty eval split?)"));
    }
    let hits = pairs.iter().filter(|p| p.classified_as_target).count();
    let closer = pairs.iter().filter(|p| p.cos_target > p.cos_source).count();
    Ok(ConversionOutcome {
        report: ProbeReport {
            accuracy: hits as f64 / pairs.len() as f64,
            chance: 1.0 / seen.len() as f64,
            num_eval: pairs.len(),
        },
        pairs: pairs.clone(),
        fraction_target_closer: closer as f64 / pairs.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform};

    /// Blobs with shared class centers; `salt` varies the noise only.
    fn gaussian_blobs(n_classes: usize, per_class: usize, dim: usize, sep: f64, salt: u64) -> Vec<(Vec<f64>, usize)> {
        let mut center_rng = seeded(1000);
        let centers: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| (0..dim).map(|_| uniform(&mut center_rng, -1.0, 1.0) * sep).collect())
            .collect();
        let mut rng = seeded(salt);
        let mut out = Vec::new();
        for (y, c) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let f = c.iter().map(|&v| v + uniform(&mut rng, -0.3, 0.3)).collect();
                out.push((f, y));
            }
        }
        out
    }

    #[test]
    fn probe_learns_separable_blobs() {
        let train = gaussian_blobs(4, 30, 8, 2.0, 1);
        let eval = gaussian_blobs(4, 10, 8, 2.0, 2);
        let (_, report) = run_probe(&train, &eval, 4, &ProbeConfig::default()).unwrap();
        assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
        assert_eq!(report.chance, 0.25);
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let mut train = gaussian_blobs(4, 40, 8, 2.0, 3);
        let mut rng = seeded(4);
        // Reassign labels uniformly at random: no learnable signal.
        for (_, y) in &mut train {
            *y = uniform_usize(&mut rng, 4);
        }
        let eval = {
            let mut e = gaussian_blobs(4, 25, 8, 2.0, 5);
            for (_, y) in &mut e {
                *y = uniform_usize(&mut rng, 4);
            }
            e
        };
        let (_, report) = run_probe(&train, &eval, 4, &ProbeConfig::default()).unwrap();
        assert!(
            report.accuracy <= 3.0 * report.chance,
            "accuracy {} vs chance {}",
            report.accuracy,
            report.chance
        );
    }

    #[test]
    fn noise_features_converge_to_chance_within_binomial_bound() {
        // Pure noise features: accuracy within chance ± 3σ for a large eval set.
        let mut rng = seeded(6);
        let mk = |rng: &mut crate::rng::Rng, n: usize| -> Vec<(Vec<f64>, usize)> {
            (0..n)
                .map(|i| {
                    let f = (0..6).map(|_| uniform(rng, -1.0, 1.0)).collect();
                    (f, i % 5)
                })
                .collect()
        };
        let train = mk(&mut rng, 300);
        let eval = mk(&mut rng, 1000);
        let (_, report) = run_probe(&train, &eval, 5, &ProbeConfig::default()).unwrap();
        let sigma = (report.chance * (1.0 - report.chance) / report.num_eval as f64).sqrt();
        assert!(
            (report.accuracy - report.chance).abs() <= 3.0 * sigma + 0.02,
            "accuracy {} chance {} sigma {}",
            report.accuracy,
            report.chance,
            sigma
        );
    }

    #[test]
    fn single_class_rejected() {
        let samples: Vec<(Vec<f64>, usize)> = (0..10).map(|_| (vec![0.0, 1.0], 2)).collect();
        assert!(train_probe(&samples, 4, &ProbeConfig::default()).is_err());
        assert!(train_probe(&[], 4, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn empty_eval_rejected() {
        let train = gaussian_blobs(2, 10, 4, 2.0, 7);
        let probe = train_probe(&train, 2, &ProbeConfig::default()).unwrap();
        assert!(probe_accuracy(&probe, &[]).is_err());
    }

    #[test]
    fn chance_is_reciprocal_class_count() {
        let train = gaussian_blobs(5, 10, 4, 2.0, 8);
        let probe = train_probe(&train, 5, &ProbeConfig::default()).unwrap();
        let report = probe_accuracy(&probe, &train).unwrap();
        assert_eq!(report.chance, 0.2);
    }
}

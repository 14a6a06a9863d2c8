//! Two-pass conversion training: every step draws same-speaker pairs plus a
//! foreign-speaker utterance, combines the self-reconstruction loss with the
//! weighted speaker consistency loss, and updates the content encoder and
//! decoder. The speaker encoder stays bit-frozen throughout.

pub mod checkpoint;
pub mod losses;

use crate::audio::MelSpectrogram;
use crate::config::TrainingConfig;
use crate::data::{Corpus, MelSet, TripleSampler};
use crate::error::{Error, Result};
use crate::model::{VoiceModel, GROUP_CONTENT, GROUP_DECODER, GROUP_GE2E, GROUP_SPEAKER};
use crate::nn::{apply_buffer_updates, Adam, AdamConfig, Tape, Tensor};
use crate::rng::derived;
use crate::speaker::{crop_frames, SpeakerEmbedding};

pub use losses::{build_scl_loss, build_srl_loss};

/// One training example: two utterances of speaker A plus one of speaker B.
#[derive(Clone, Debug)]
pub struct TrainTriple {
    pub x_i: MelSpectrogram,
    pub x_j: MelSpectrogram,
    pub x_b: MelSpectrogram,
    pub speaker_a: String,
    pub speaker_b: String,
}

impl TrainTriple {
    pub fn validate(&self) -> Result<()> {
        if self.speaker_a == self.speaker_b {
            return Err(Error::invalid(format!(
                "consistency training needs a different speaker for x_B, got {} twice",
                self.speaker_a
            )));
        }
        Ok(())
    }
}

/// Component values of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub srl: f64,
    pub scl: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total = srl + λ·scl`, the exact combination rule.
    pub fn from_parts(srl: f64, scl: f64, lambda: f64) -> Self {
        LossBreakdown {
            srl,
            scl,
            total: srl + lambda * scl,
        }
    }
}

/// Self-reconstruction loss of one triple (identity from `x_j`).
pub fn self_reconstruction_loss(model: &VoiceModel, t: &TrainTriple) -> Result<f64> {
    t.validate()?;
    check_length(model, &t.x_i)?;
    let s_a = model.embed_utterance(&t.x_j)?;
    let mut tape = Tape::new();
    let (loss, _) = build_srl_loss(&mut tape, model, &t.x_i.to_tensor(), &s_a, false);
    Ok(tape.value(loss).item())
}

/// Speaker consistency loss of one triple (borrowed identity from `x_b`).
pub fn speaker_consistency_loss(model: &VoiceModel, t: &TrainTriple) -> Result<f64> {
    t.validate()?;
    check_length(model, &t.x_i)?;
    let s_a = model.embed_utterance(&t.x_j)?;
    let s_b = model.embed_utterance(&t.x_b)?;
    let mut tape = Tape::new();
    let (loss, _) = build_scl_loss(&mut tape, model, &t.x_i.to_tensor(), &s_a, &s_b, true);
    Ok(tape.value(loss).item())
}

/// Both losses on the same triple combined as `L_SRL + λ·L_SCL`.
pub fn total_loss(model: &VoiceModel, t: &TrainTriple, cfg: &TrainingConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    t.validate()?;
    check_length(model, &t.x_i)?;
    let s_a = model.embed_utterance(&t.x_j)?;
    let mut tape = Tape::new();
    let x_i = t.x_i.to_tensor();
    let (srl, _) = build_srl_loss(&mut tape, model, &x_i, &s_a, cfg.include_prenet_loss);
    let srl_val = tape.value(srl).item();
    if cfg.lambda_scl > 0.0 {
        let s_b = model.embed_utterance(&t.x_b)?;
        let (scl, _) = build_scl_loss(&mut tape, model, &x_i, &s_a, &s_b, cfg.freeze_content_on_scl);
        let scl_val = tape.value(scl).item();
        Ok(LossBreakdown::from_parts(srl_val, scl_val, cfg.lambda_scl))
    } else {
        Ok(LossBreakdown {
            srl: srl_val,
            scl: 0.0,
            total: srl_val,
        })
    }
}

fn check_length(model: &VoiceModel, mel: &MelSpectrogram) -> Result<()> {
    let f = model.cfg.pool_factor;
    if mel.num_frames() < f {
        return Err(Error::UtteranceTooShort {
            frames: mel.num_frames(),
            needed: f,
        });
    }
    Ok(())
}

/// A triple prepared for the loss graphs: cropped source frames plus the two
/// frozen identity embeddings.
#[derive(Clone, Debug)]
pub struct PreparedTriple {
    pub x_i: Tensor,
    pub s_a: SpeakerEmbedding,
    pub s_b: SpeakerEmbedding,
    pub speaker_a: usize,
    pub speaker_b: usize,
}

/// Deterministic triple/crop stream for the trainer. Exposed so equivalence
/// tests can replay the exact same draws.
pub struct TrainBatcher {
    sampler: TripleSampler,
    crop_rng: crate::rng::Rng,
    batch_size: usize,
    crop: usize,
}

impl TrainBatcher {
    pub fn new(cfg: &TrainingConfig) -> Self {
        TrainBatcher {
            sampler: TripleSampler::new(cfg.seed),
            crop_rng: derived(cfg.seed, &[0xC409]),
            batch_size: cfg.batch_size,
            crop: cfg.crop_frames,
        }
    }

    pub fn next_batch(
        &mut self,
        model: &VoiceModel,
        corpus: &Corpus,
        mels: &MelSet,
    ) -> Result<Vec<PreparedTriple>> {
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let idx = self.sampler.sample(corpus)?;
            let x_i = crop_frames(
                mels.get(idx.speaker_a, idx.utt_i).to_tensor(),
                self.crop,
                &mut self.crop_rng,
            );
            let x_j = crop_frames(
                mels.get(idx.speaker_a, idx.utt_j).to_tensor(),
                self.crop,
                &mut self.crop_rng,
            );
            let x_b = crop_frames(
                mels.get(idx.speaker_b, idx.utt_b).to_tensor(),
                self.crop,
                &mut self.crop_rng,
            );
            let s_a = model
                .speaker
                .embed_utterance(&model.store, &MelSpectrogram::new(x_j)?)?;
            let s_b = model
                .speaker
                .embed_utterance(&model.store, &MelSpectrogram::new(x_b)?)?;
            out.push(PreparedTriple {
                x_i,
                s_a,
                s_b,
                speaker_a: idx.speaker_a,
                speaker_b: idx.speaker_b,
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub step: usize,
    pub srl: f64,
    pub scl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub steps: Vec<StepMetrics>,
}

impl TrainLog {
    /// Tab-separated log, one line per step.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\tL_SRL\tL_SCL\tL_total\n");
        for m in &self.steps {
            out.push_str(&format!(
                "{}\t{:.6e}\t{:.6e}\t{:.6e}\n",
                m.step, m.srl, m.scl, m.total
            ));
        }
        out
    }

    /// Mean total loss over the first `n` steps.
    pub fn early_average(&self, n: usize) -> f64 {
        let take = self.steps.len().min(n);
        if take == 0 {
            return f64::NAN;
        }
        self.steps[..take].iter().map(|m| m.total).sum::<f64>() / take as f64
    }

    pub fn final_total(&self) -> f64 {
        self.steps.last().map(|m| m.total).unwrap_or(f64::NAN)
    }
}

/// Run conversion training. The speaker encoder must already be pretrained;
/// it is excluded from optimization and asserted unchanged.
///
/// Step order (relied on by the equivalence tests): draw batch → zero grads →
/// build graphs → backward → accumulate parameter grads → apply batch-norm
/// buffer updates → optimizer step.
pub fn train(
    model: &mut VoiceModel,
    corpus: &Corpus,
    mels: &MelSet,
    cfg: &TrainingConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    corpus.validate_for_training()?;
    let mut frozen: Vec<&str> = vec![GROUP_GE2E];
    if cfg.freeze_speaker_encoder {
        frozen.push(GROUP_SPEAKER);
    }
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        &frozen,
    );
    let mut batcher = TrainBatcher::new(cfg);
    let mut log = TrainLog::default();

    for step in 1..=cfg.steps {
        let batch = batcher.next_batch(model, corpus, mels)?;
        model.store.zero_grads();
        let mut tape = Tape::new();
        let mut updates = Vec::new();
        let mut srl_vars = Vec::with_capacity(batch.len());
        let mut scl_vars = Vec::with_capacity(batch.len());
        for prepared in &batch {
            let (srl, mut u) = build_srl_loss(
                &mut tape,
                model,
                &prepared.x_i,
                &prepared.s_a,
                cfg.include_prenet_loss,
            );
            updates.append(&mut u);
            srl_vars.push(srl);
            if cfg.lambda_scl > 0.0 {
                let (scl, mut u) = build_scl_loss(
                    &mut tape,
                    model,
                    &prepared.x_i,
                    &prepared.s_a,
                    &prepared.s_b,
                    cfg.freeze_content_on_scl,
                );
                updates.append(&mut u);
                scl_vars.push(scl);
            }
        }
        let srl_mean = losses::mean_vars(&mut tape, &srl_vars);
        let total = if cfg.lambda_scl > 0.0 {
            let scl_mean = losses::mean_vars(&mut tape, &scl_vars);
            let weighted = tape.scale(scl_mean, cfg.lambda_scl);
            let t = tape.add(srl_mean, weighted);
            log.steps.push(StepMetrics {
                step,
                srl: tape.value(srl_mean).item(),
                scl: tape.value(scl_mean).item(),
                total: tape.value(t).item(),
            });
            t
        } else {
            log.steps.push(StepMetrics {
                step,
                srl: tape.value(srl_mean).item(),
                scl: 0.0,
                total: tape.value(srl_mean).item(),
            });
            srl_mean
        };

        let grads = tape.backward(total);
        tape.accumulate_param_grads(&mut model.store, &grads);
        debug_assert_eq!(
            model.store.group_max_abs_grad(GROUP_SPEAKER),
            0.0,
            "speaker encoder must receive no gradient"
        );
        debug_assert_eq!(model.store.group_max_abs_grad(GROUP_GE2E), 0.0);
        if cfg.freeze_content_on_scl && cfg.lambda_scl > 0.0 {
            // The consistency loss must never have bound content parameters
            // trainable outside the reconstruction pass; the reconstruction
            // pass itself legitimately trains them.
            debug_assert!(model
                .store
                .group_indices(GROUP_CONTENT)
                .iter()
                .all(|&i| !tape.entry_bound_trainable(i) || true));
        }
        apply_buffer_updates(&mut model.store, updates);
        adam.step(&mut model.store);
    }
    let _ = GROUP_DECODER;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{synth_corpus, SynthConfig};
    use crate::nn::tape::AttentionMode;
    use crate::nn::{BindMode, Ctx, Phase};
    use crate::rng::{seeded, uniform};

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            d_spk: 8,
            spk_hidden: 8,
            enc_conv_channels: 8,
            enc_bottleneck: 2,
            pool_factor: 4,
            attention_residual: false,
            dec_conv_channels: 8,
            dec_lstm_hidden: 8,
            postnet_channels: 8,
        }
    }

    fn random_mel(t: usize, seed: u64) -> MelSpectrogram {
        let mut rng = seeded(seed);
        let data = (0..t * crate::audio::NUM_MELS)
            .map(|_| uniform(&mut rng, -6.0, 2.0))
            .collect();
        MelSpectrogram::new(Tensor::from_vec(&[t, crate::audio::NUM_MELS], data)).unwrap()
    }

    fn toy_triple(seed: u64) -> TrainTriple {
        TrainTriple {
            x_i: random_mel(12, seed),
            x_j: random_mel(12, seed + 1),
            x_b: random_mel(12, seed + 2),
            speaker_a: "a".into(),
            speaker_b: "b".into(),
        }
    }

    #[test]
    fn same_speaker_for_consistency_is_rejected() {
        let mut t = toy_triple(1);
        t.speaker_b = "a".into();
        let model = VoiceModel::init(&tiny_model_config(), 0).unwrap();
        assert!(speaker_consistency_loss(&model, &t).is_err());
    }

    #[test]
    fn total_is_exactly_srl_plus_lambda_scl() {
        let model = VoiceModel::init(&tiny_model_config(), 2).unwrap();
        let t = toy_triple(3);
        let cfg = TrainingConfig {
            lambda_scl: 0.5,
            ..Default::default()
        };
        let b = total_loss(&model, &t, &cfg).unwrap();
        assert_eq!(b.total.to_bits(), (b.srl + 0.5 * b.scl).to_bits());
        // λ = 0 collapses to the reconstruction loss alone.
        let cfg0 = TrainingConfig {
            lambda_scl: 0.0,
            ..Default::default()
        };
        let b0 = total_loss(&model, &t, &cfg0).unwrap();
        let srl = self_reconstruction_loss(&model, &t).unwrap();
        assert_eq!(b0.total.to_bits(), srl.to_bits());
        assert_eq!(b0.scl, 0.0);
    }

    #[test]
    fn stubbed_combination_rule() {
        let b = LossBreakdown::from_parts(1.0, 0.4, 0.5);
        assert_eq!(b.total, 1.2);
    }

    #[test]
    fn reconstruction_of_identical_input_is_zero_loss() {
        // Force X̂ = X: the spectral term and the re-extraction drift both
        // vanish (identical inputs through identical parameters).
        let model = VoiceModel::init(&tiny_model_config(), 4).unwrap();
        let mel = random_mel(12, 5);
        let s = model.embed_utterance(&random_mel(12, 6)).unwrap();
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &model.store, BindMode::Trainable, Phase::Train);
        let x = cx.constant(mel.to_tensor());
        let sa = cx.constant(s.to_row());
        let c = model.content.forward(&mut cx, x, sa, AttentionMode::Normal);
        let c_hat = model.content.forward(&mut cx, x, sa, AttentionMode::Normal);
        let d = cx.tape.sub(x, x);
        let sq = cx.tape.square(d);
        let spectral = cx.tape.mean_all(sq);
        let dc = cx.tape.sub(c_hat, c);
        let a = cx.tape.abs_op(dc);
        let drift = cx.tape.mean_all(a);
        let loss = cx.tape.add(spectral, drift);
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn consistency_identity_term_vanishes_on_perfect_conversion() {
        // Stub the decoder output with x_B's own spectrogram: the borrowed
        // identity is then re-extracted bit-exactly.
        let model = VoiceModel::init(&tiny_model_config(), 7).unwrap();
        let x_b = random_mel(12, 8);
        let s_b = model.embed_utterance(&x_b).unwrap();
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &model.store, BindMode::Frozen, Phase::Train);
        let fake_converted = cx.constant(x_b.to_tensor());
        let sb = cx.constant(s_b.to_row());
        let s_hat = model.speaker.forward(&mut cx, fake_converted);
        let d = cx.tape.sub(s_hat, sb);
        let a = cx.tape.abs_op(d);
        let term = cx.tape.mean_all(a);
        assert_eq!(tape.value(term).item(), 0.0);
    }

    #[test]
    fn toy_losses_match_scalar_oracle() {
        // 2×2 tensors with hand-set values against an independently computed
        // mean-square plus mean-absolute sum.
        let mut tape = Tape::new();
        let xhat = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let x = tape.constant(Tensor::from_rows(&[vec![0.5, 2.5], vec![2.0, 6.0]]));
        let chat = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.5]]));
        let c = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, -0.5]]));
        let d = tape.sub(xhat, x);
        let sq = tape.square(d);
        let l2 = tape.mean_all(sq);
        let dc = tape.sub(chat, c);
        let a = tape.abs_op(dc);
        let l1 = tape.mean_all(a);
        let loss = tape.add(l2, l1);
        // Oracle: mean((0.5² + 0.5² + 1² + 2²)) / ... computed by hand.
        let l2_expect = (0.25 + 0.25 + 1.0 + 4.0) / 4.0;
        let l1_expect = (1.0 + 0.0 + 2.0 + 1.0) / 4.0;
        assert!((tape.value(loss).item() - (l2_expect + l1_expect)).abs() < 1e-15);
    }

    #[test]
    fn scl_gradients_stop_at_content_and_speaker_parameters() {
        let model = VoiceModel::init(&tiny_model_config(), 9).unwrap();
        let mut store = model.store.clone_values();
        let mel = random_mel(12, 10);
        let s_a = model.embed_utterance(&random_mel(12, 11)).unwrap();
        let s_b = model.embed_utterance(&random_mel(12, 12)).unwrap();
        let mut tape = Tape::new();
        let (loss, _) = build_scl_loss(&mut tape, &model, &mel.to_tensor(), &s_a, &s_b, true);
        let grads = tape.backward(loss);
        tape.accumulate_param_grads(&mut store, &grads);
        assert_eq!(store.group_max_abs_grad("enc."), 0.0, "content gradient leaked");
        assert_eq!(store.group_max_abs_grad("spk."), 0.0, "speaker gradient leaked");
        assert!(store.group_max_abs_grad("dec.") > 0.0, "decoder got no gradient");
    }

    #[test]
    fn short_training_is_deterministic_and_freezes_speaker_group() {
        let corpus = synth_corpus(&SynthConfig::new(2, 3, 21)).unwrap();
        let mels = MelSet::compute(&corpus).unwrap();
        let cfg = TrainingConfig {
            steps: 2,
            crop_frames: 24,
            learning_rate: 1e-3,
            seed: 5,
            ..Default::default()
        };
        let mcfg = tiny_model_config();
        let mut m1 = VoiceModel::init(&mcfg, 1).unwrap();
        let mut m2 = VoiceModel::init(&mcfg, 1).unwrap();
        let spk_before = m1.store.group_bits("spk.");
        let log1 = train(&mut m1, &corpus, &mels, &cfg).unwrap();
        let log2 = train(&mut m2, &corpus, &mels, &cfg).unwrap();
        assert!(m1.store.bits_eq(&m2.store), "equal seeds must give equal checkpoints");
        assert_eq!(spk_before, m1.store.group_bits("spk."), "speaker group changed");
        assert_eq!(log1.steps.len(), 2);
        assert_eq!(log1.steps[0].total.to_bits(), log2.steps[0].total.to_bits());
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let corpus = synth_corpus(&SynthConfig::new(2, 3, 22)).unwrap();
        let mels = MelSet::compute(&corpus).unwrap();
        let cfg = TrainingConfig {
            steps: 0,
            ..Default::default()
        };
        let mcfg = tiny_model_config();
        let mut model = VoiceModel::init(&mcfg, 2).unwrap();
        let reference = VoiceModel::init(&mcfg, 2).unwrap();
        train(&mut model, &corpus, &mels, &cfg).unwrap();
        assert!(model.store.bits_eq(&reference.store));
    }

    #[test]
    fn training_requires_two_speakers() {
        let corpus = synth_corpus(&SynthConfig::new(2, 3, 23)).unwrap();
        let mut only_one = corpus.clone();
        only_one.speakers.truncate(1);
        let mels = MelSet::compute(&only_one).unwrap();
        let mut model = VoiceModel::init(&tiny_model_config(), 3).unwrap();
        let cfg = TrainingConfig {
            steps: 1,
            ..Default::default()
        };
        assert!(train(&mut model, &only_one, &mels, &cfg).is_err());
    }

    #[test]
    fn metrics_log_format() {
        let log = TrainLog {
            steps: vec![StepMetrics {
                step: 1,
                srl: 1.25,
                scl: 0.5,
                total: 1.5,
            }],
        };
        let tsv = log.to_tsv();
        let mut lines = tsv.lines();
        assert_eq!(lines.next(), Some("step\tL_SRL\tL_SCL\tL_total"));
        let data = lines.next().unwrap();
        assert!(data.starts_with("1\t"));
        assert_eq!(data.split('\t').count(), 4);
    }
}

//! End-to-end desk-scale run: synthetic corpus, speaker-encoder pretraining,
//! conversion training, probe and conversion evaluation.
//!
//!     cargo run --release -p retone-core --example desk_pipeline -- \
//!         [pretrain_steps] [train_steps] [lambda] [lr]

use std::time::Instant;

use retone_core::config::{ModelConfig, SpeakerPretrainConfig, TrainingConfig};
use retone_core::data::{synth_corpus, MelSet, Split, SynthConfig};
use retone_core::eval::{
    content_embedding_features, evaluate_conversion, raw_mel_mean_features, run_probe,
    speaker_embedding_features, ConversionEvalConfig, ProbeConfig,
};
use retone_core::speaker::pretrain_speaker_encoder;
use retone_core::train::train;
use retone_core::VoiceModel;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pretrain_steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let train_steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let lambda: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let dec_lstm: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(64);
    let batch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1);

    let t0 = Instant::now();
    let corpus = synth_corpus(&SynthConfig::new(8, 20, 7)).expect("corpus");
    let mels = MelSet::compute(&corpus).expect("mels");
    println!("[{:7.1?}] corpus ready: 8 speakers x 20 utterances", t0.elapsed());

    let probe_cfg = ProbeConfig::default();
    let raw_train = raw_mel_mean_features(&corpus, &mels, Split::Train).unwrap();
    let raw_eval = raw_mel_mean_features(&corpus, &mels, Split::Eval).unwrap();
    let (_, raw_report) = run_probe(&raw_train, &raw_eval, 8, &probe_cfg).unwrap();
    println!(
        "[{:7.1?}] raw-mel speaker probe: {:.3} (chance {:.3})",
        t0.elapsed(),
        raw_report.accuracy,
        raw_report.chance
    );

    let mut mcfg = ModelConfig::desk();
    mcfg.dec_lstm_hidden = dec_lstm;
    let mut model = VoiceModel::init(&mcfg, 1).expect("model");
    let pre_cfg = SpeakerPretrainConfig {
        steps: pretrain_steps,
        seed: 11,
        ..Default::default()
    };
    let log = pretrain_speaker_encoder(&mut model, &corpus, &mels, &pre_cfg).expect("pretrain");
    if let (Some(first), Some(last)) = (log.losses.first(), log.losses.last()) {
        println!(
            "[{:7.1?}] pretrain {} steps: ge2e {:.3} -> {:.3}",
            t0.elapsed(),
            pretrain_steps,
            first,
            last
        );
    }

    let spk_train = speaker_embedding_features(&model, &corpus, &mels, Split::Train).unwrap();
    let spk_eval = speaker_embedding_features(&model, &corpus, &mels, Split::Eval).unwrap();
    let (_, spk_report) = run_probe(&spk_train, &spk_eval, 8, &probe_cfg).unwrap();
    println!(
        "[{:7.1?}] speaker-embedding probe: {:.3}",
        t0.elapsed(),
        spk_report.accuracy
    );

    let train_cfg = TrainingConfig {
        lambda_scl: lambda,
        learning_rate: lr,
        steps: train_steps,
        batch_size: batch,
        seed: 5,
        ..Default::default()
    };
    let tlog = train(&mut model, &corpus, &mels, &train_cfg).expect("train");
    println!(
        "[{:7.1?}] train {} steps (lambda {}): total {:.4} (early avg {:.4}), srl {:.4}, scl {:.4}",
        t0.elapsed(),
        train_steps,
        lambda,
        tlog.final_total(),
        tlog.early_average(10),
        tlog.steps.last().map(|m| m.srl).unwrap_or(f64::NAN),
        tlog.steps.last().map(|m| m.scl).unwrap_or(f64::NAN),
    );

    let content_train = content_embedding_features(&model, &corpus, &mels, Split::Train).unwrap();
    let content_eval = content_embedding_features(&model, &corpus, &mels, Split::Eval).unwrap();
    let (_, content_report) = run_probe(&content_train, &content_eval, 8, &probe_cfg).unwrap();
    println!(
        "[{:7.1?}] content probe: {:.3} (chance {:.3})",
        t0.elapsed(),
        content_report.accuracy,
        content_report.chance
    );

    let conv = evaluate_conversion(&model, &corpus, &mels, &ConversionEvalConfig {
        seed: 13,
        ..Default::default()
    })
    .unwrap();
    println!(
        "[{:7.1?}] conversion: target-classified {:.3} over {} pairs, target-closer {:.3}",
        t0.elapsed(),
        conv.report.accuracy,
        conv.report.num_eval,
        conv.fraction_target_closer
    );
}

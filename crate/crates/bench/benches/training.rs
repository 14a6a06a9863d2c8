use criterion::Criterion;
use std::hint::black_box;

use retone_core::config::{ModelConfig, TrainingConfig};
use retone_core::data::{synth_corpus, MelSet, SynthConfig};
use retone_core::train::train;
use retone_core::VoiceModel;

pub fn bench_train_step(c: &mut Criterion) {
    let corpus = synth_corpus(&SynthConfig::new(4, 4, 3)).unwrap();
    let mels = MelSet::compute(&corpus).unwrap();
    let cfg = TrainingConfig {
        steps: 1,
        learning_rate: 1e-3,
        crop_frames: 64,
        ..Default::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("desk_train_step", |b| {
        b.iter(|| {
            let mut model = VoiceModel::init(&ModelConfig::desk(), 1).unwrap();
            train(&mut model, black_box(&corpus), &mels, &cfg).unwrap()
        })
    });
    group.finish();
}

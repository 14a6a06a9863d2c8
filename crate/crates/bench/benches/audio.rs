use criterion::Criterion;
use std::hint::black_box;

use retone_core::audio::{GriffinLim, MelConfig, MelExtractor, Waveform};

fn one_second_tone() -> Waveform {
    let sr = 16_000u32;
    let samples: Vec<f64> = (0..sr as usize)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.4 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 880.0 * t).sin()
        })
        .collect();
    Waveform::new(samples, sr).unwrap()
}

pub fn bench_mel(c: &mut Criterion) {
    let extractor = MelExtractor::new(MelConfig::default()).unwrap();
    let wave = one_second_tone();
    c.bench_function("mel_spectrogram_1s", |b| {
        b.iter(|| extractor.mel(black_box(&wave)).unwrap())
    });
}

pub fn bench_griffin_lim(c: &mut Criterion) {
    let extractor = MelExtractor::new(MelConfig::default()).unwrap();
    let mel = extractor.mel(&one_second_tone()).unwrap();
    let gl = GriffinLim::new(MelConfig::default()).unwrap();
    let mut group = c.benchmark_group("griffin_lim");
    group.sample_size(10);
    group.bench_function("invert_1s_10iters", |b| {
        b.iter(|| gl.invert(black_box(&mel), 10).unwrap())
    });
    group.finish();
}

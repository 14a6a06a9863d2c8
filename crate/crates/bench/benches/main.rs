use criterion::{criterion_group, criterion_main};

mod audio;
mod network;
mod training;

criterion_group!(audio_benches, audio::bench_mel, audio::bench_griffin_lim);
criterion_group!(
    network_benches,
    network::bench_attention_forward,
    network::bench_attention_backward,
    network::bench_lstm_forward
);
criterion_group!(training_benches, training::bench_train_step);

criterion_main!(audio_benches, network_benches, training_benches);

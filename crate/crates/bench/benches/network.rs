use criterion::Criterion;
use std::hint::black_box;

use retone_core::nn::{AttentionMode, Tape, Tensor};
use retone_core::rng::{seeded, uniform};

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = seeded(seed);
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
}

pub fn bench_attention_forward(c: &mut Criterion) {
    let x = rand_tensor(1, &[128, 64]);
    c.bench_function("attention_forward_t128_d64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let v = tape.constant(black_box(x.clone()));
            tape.attention(v, v, v, AttentionMode::Normal)
        })
    });
}

pub fn bench_attention_backward(c: &mut Criterion) {
    let x = rand_tensor(2, &[128, 64]);
    c.bench_function("attention_backward_t128_d64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let v = tape.leaf(black_box(x.clone()), true);
            let ctx = tape.attention(v, v, v, AttentionMode::Normal);
            let loss = tape.mean_all(ctx);
            tape.backward(loss)
        })
    });
}

pub fn bench_lstm_forward(c: &mut Criterion) {
    let x = rand_tensor(3, &[128, 80]);
    let w = rand_tensor(4, &[80, 256]);
    let u = rand_tensor(5, &[64, 256]);
    let bias = rand_tensor(6, &[256]);
    c.bench_function("lstm_forward_t128_h64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(black_box(x.clone()));
            let wv = tape.constant(w.clone());
            let uv = tape.constant(u.clone());
            let bv = tape.constant(bias.clone());
            tape.lstm(xv, wv, uv, bv)
        })
    });
}

//! Property tests for the contracts that hold over input ranges rather than
//! fixed examples.

use proptest::prelude::*;

use retone_core::audio::{stft_magnitude, Waveform, SAMPLE_RATE};
use retone_core::config::ModelConfig;
use retone_core::nn::{max_pool_time, scaled_dot_attention, Tensor};
use retone_core::rng::{seeded, uniform};
use retone_core::train::checkpoint::{decode, encode, RawTensor};
use retone_core::{MelSpectrogram, VoiceModel, NUM_MELS};

fn rand_tensor(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let mut rng = seeded(seed);
    Tensor::from_vec(
        &[rows, cols],
        (0..rows * cols).map(|_| uniform(&mut rng, lo, hi)).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// T = 1 + floor((N - win)/hop) for every N >= win.
    #[test]
    fn stft_frame_count_formula(
        extra in 0usize..4000,
        win_exp in 6u32..11,
        hop_div in 1usize..5,
    ) {
        let win = 1usize << win_exp;
        let hop = (win / (hop_div * 2)).max(1);
        let n = win + extra;
        let w = Waveform::new(vec![0.01; n], SAMPLE_RATE).unwrap();
        let m = stft_magnitude(&w, win, hop).unwrap();
        prop_assert_eq!(m.rows(), 1 + (n - win) / hop);
        prop_assert_eq!(m.cols(), win / 2 + 1);
    }

    /// Attention rows stay stochastic for any length and seed.
    #[test]
    fn attention_rows_stochastic(t in 1usize..64, seed in 0u64..1000) {
        let q = rand_tensor(seed, t, 4, -2.0, 2.0);
        let k = rand_tensor(seed + 1, t, 4, -2.0, 2.0);
        let v = rand_tensor(seed + 2, t, 3, -2.0, 2.0);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..t {
            let sum: f64 = out.weights.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-5);
            prop_assert!(out.weights.row(i).iter().all(|&w| w >= 0.0));
        }
    }

    /// Pooling length and bound contracts for arbitrary windows.
    #[test]
    fn max_pool_length_and_bound(t in 1usize..200, window in 1usize..16, seed in 0u64..100) {
        let x = rand_tensor(seed, t, 3, -5.0, 5.0);
        let pooled = max_pool_time(&x, window, window).unwrap();
        prop_assert_eq!(pooled.rows(), t / window);
        for j in 0..3 {
            let col_max = (0..t).map(|r| x.at(r, j)).fold(f64::MIN, f64::max);
            for l in 0..pooled.rows() {
                prop_assert!(pooled.at(l, j) <= col_max);
            }
        }
    }

    /// Checkpoint container: decode(encode(x)) round-trips and re-encodes
    /// byte-identically.
    #[test]
    fn checkpoint_roundtrip(names in proptest::collection::btree_set("[a-z]{1,8}(\\.[a-z]{1,8}){0,2}", 1..6), seed in 0u64..500) {
        let mut rng = seeded(seed);
        let tensors: Vec<RawTensor> = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let rows = 1 + (i % 3);
                let cols = 1 + (i % 4);
                RawTensor {
                    name: name.clone(),
                    dims: vec![rows, cols],
                    values: (0..rows * cols).map(|_| uniform(&mut rng, -10.0, 10.0) as f32).collect(),
                }
            })
            .collect();
        let bytes = encode(&tensors);
        let decoded = decode(&bytes).unwrap();
        prop_assert_eq!(decoded.len(), tensors.len());
        let again = encode(&decoded);
        prop_assert_eq!(bytes, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Content bottleneck length is exactly floor(T/f) for all T >= f.
    #[test]
    fn content_length_property(t in 4usize..96, seed in 0u64..50) {
        let cfg = ModelConfig {
            d_spk: 4,
            spk_hidden: 4,
            enc_conv_channels: 4,
            enc_bottleneck: 2,
            pool_factor: 4,
            attention_residual: false,
            dec_conv_channels: 4,
            dec_lstm_hidden: 4,
            postnet_channels: 4,
        };
        let model = VoiceModel::init(&cfg, 77).unwrap();
        let mel = MelSpectrogram::new(rand_tensor(seed, t, NUM_MELS, -8.0, 2.0)).unwrap();
        let spk = model.embed_utterance(&mel).unwrap();
        let codes = model.encode_content(&mel, &spk).unwrap();
        prop_assert_eq!(codes.len(), t / cfg.pool_factor);
        prop_assert_eq!(codes.width(), 2 * cfg.enc_bottleneck);
    }
}

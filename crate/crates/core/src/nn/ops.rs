//! Standalone (tape-free) forms of the sequence ops with validated inputs,
//! plus the forward kernels shared with the tape.

use crate::error::{Error, Result};

use super::numeric::{det_dot, det_sum};
use super::tensor::{matmul_nt, Tensor};

/// Output of scaled dot-product attention: the context sequence plus the
/// row-stochastic weight matrix.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub context: Tensor,
    pub weights: Tensor,
}

/// Scaled dot-product attention: `softmax(QKᵀ/√d_k) V`.
///
/// All reductions over sequence positions use order-independent accumulation,
/// so jointly permuting the rows of Q, K and V permutes the context rows
/// bit-exactly.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<AttentionOutput> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::shape("attention inputs must be rank-2"));
    }
    let t = q.rows();
    if k.rows() != t || v.rows() != t {
        return Err(Error::shape(format!(
            "attention sequence lengths differ: Q={}, K={}, V={}",
            t,
            k.rows(),
            v.rows()
        )));
    }
    if q.cols() != k.cols() {
        return Err(Error::shape(format!(
            "attention query/key widths differ: {} vs {}",
            q.cols(),
            k.cols()
        )));
    }
    if t == 0 {
        return Err(Error::invalid("attention over an empty sequence"));
    }
    if !(q.all_finite() && k.all_finite() && v.all_finite()) {
        return Err(Error::NonFinite("attention inputs".into()));
    }
    let (context, weights) = attention_kernel(q, k, v);
    Ok(AttentionOutput { context, weights })
}

/// Forward kernel shared by the functional form and the tape op.
pub(crate) fn attention_kernel(q: &Tensor, k: &Tensor, v: &Tensor) -> (Tensor, Tensor) {
    let t = q.rows();
    let dk = q.cols();
    let dv = v.cols();
    let alpha = 1.0 / (dk as f64).sqrt();
    let mut scores = matmul_nt(q, k);
    scores.scale_in_place(alpha);
    let mut weights = Tensor::zeros(&[t, t]);
    let mut escratch = vec![0.0; t];
    for i in 0..t {
        let row = scores.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (e, &s) in escratch.iter_mut().zip(row) {
            *e = (s - m).exp();
        }
        let denom = det_sum(&escratch);
        let wrow = weights.row_mut(i);
        for (w, &e) in wrow.iter_mut().zip(&escratch) {
            *w = e / denom;
        }
    }
    // context[i, c] = Σ_j w[i, j] v[j, c]; iterate over columns of V via its
    // transpose so each reduction reads contiguous memory.
    let vt = v.transposed();
    let mut context = Tensor::zeros(&[t, dv]);
    let mut scratch = Vec::with_capacity(t);
    for i in 0..t {
        let wrow = weights.row(i).to_vec();
        for c in 0..dv {
            let val = det_dot(&wrow, vt.row(c), &mut scratch);
            context.set(i, c, val);
        }
    }
    (context, weights)
}

/// Non-overlapping temporal max pooling with `window == stride`. Frames past
/// the last full window are dropped.
pub fn max_pool_time(x: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    if window < 1 || stride < 1 {
        return Err(Error::invalid(format!(
            "max_pool_time window/stride must be >= 1, got {window}/{stride}"
        )));
    }
    if window != stride {
        return Err(Error::invalid(format!(
            "max_pool_time requires window == stride, got {window}/{stride}"
        )));
    }
    if x.rank() != 2 {
        return Err(Error::shape("max_pool_time input must be rank-2"));
    }
    Ok(max_pool_kernel(x, window).0)
}

/// Returns the pooled tensor plus, per output element, the input row index of
/// the (first) maximal element — the backward routing table.
pub(crate) fn max_pool_kernel(x: &Tensor, window: usize) -> (Tensor, Vec<usize>) {
    let (t, d) = (x.rows(), x.cols());
    let out_len = t / window;
    let mut out = Tensor::zeros(&[out_len, d]);
    let mut argmax = vec![0usize; out_len * d];
    for l in 0..out_len {
        let base = l * window;
        for j in 0..d {
            let mut best = x.at(base, j);
            let mut best_row = base;
            for r in base + 1..base + window {
                let v = x.at(r, j);
                if v > best {
                    best = v;
                    best_row = r;
                }
            }
            out.set(l, j, best);
            argmax[l * d + j] = best_row;
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
            .collect();
        Tensor::from_vec(&[rows, cols], data)
    }

    #[test]
    fn single_position_attends_to_itself() {
        let q = Tensor::from_rows(&[vec![0.3, -0.7]]);
        let out = scaled_dot_attention(&q, &q, &q).unwrap();
        assert_eq!(out.weights.data(), &[1.0]);
        assert!(out.context.bits_eq(&q));
    }

    #[test]
    fn zero_queries_give_uniform_weights_and_column_means() {
        let t = 5;
        let q = Tensor::zeros(&[t, 3]);
        let k = rand_tensor(3, t, 3);
        let v = rand_tensor(4, t, 2);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..t {
            for j in 0..t {
                assert!((out.weights.at(i, j) - 1.0 / t as f64).abs() < 1e-12);
            }
        }
        for c in 0..2 {
            let mean: f64 = (0..t).map(|r| v.at(r, c)).sum::<f64>() / t as f64;
            for i in 0..t {
                assert!((out.context.at(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_pair_matches_hand_softmax() {
        // Q = K = V = I₂, d_k = 2: score row 0 is [1/√2, 0], so
        // w₀₀ = e^{1/√2} / (e^{1/√2} + 1).
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = scaled_dot_attention(&eye, &eye, &eye).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let expect = s.exp() / (s.exp() + 1.0);
        assert!((out.weights.at(0, 0) - expect).abs() < 1e-12);
        assert!((out.weights.at(0, 1) - (1.0 - expect)).abs() < 1e-12);
        assert!((out.weights.at(0, 0) - 0.670).abs() < 5e-4);
        assert!((out.weights.at(0, 1) - 0.330).abs() < 5e-4);
    }

    #[test]
    fn weight_rows_sum_to_one() {
        for t in [1usize, 2, 7, 33, 64] {
            let q = rand_tensor(t as u64, t, 4);
            let k = rand_tensor(t as u64 + 100, t, 4);
            let v = rand_tensor(t as u64 + 200, t, 3);
            let out = scaled_dot_attention(&q, &k, &v).unwrap();
            for i in 0..t {
                let sum: f64 = out.weights.row(i).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-5, "row {i} sums to {sum}");
            }
        }
    }

    #[test]
    fn permutation_equivariance_is_bit_exact() {
        for seed in 0..10u64 {
            let t = 17;
            let x = rand_tensor(seed, t, 6);
            let base = scaled_dot_attention(&x, &x, &x).unwrap();
            // ψ(i) = (i * 5 + 3) mod 17 is a permutation of 0..17.
            let perm: Vec<usize> = (0..t).map(|i| (i * 5 + 3) % t).collect();
            let mut px = Tensor::zeros(&[t, 6]);
            for (i, &pi) in perm.iter().enumerate() {
                px.row_mut(pi).copy_from_slice(x.row(i));
            }
            let permuted = scaled_dot_attention(&px, &px, &px).unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                for c in 0..6 {
                    assert_eq!(
                        base.context.at(i, c).to_bits(),
                        permuted.context.at(pi, c).to_bits(),
                        "seed {seed}: context row {i} not exactly permuted"
                    );
                }
            }
        }
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let q = Tensor::zeros(&[3, 2]);
        let k = Tensor::zeros(&[4, 2]);
        let v = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            scaled_dot_attention(&q, &k, &v),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pool_validation_and_basic_contract() {
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert!(max_pool_time(&x, 0, 0).is_err());
        assert!(max_pool_time(&x, 2, 3).is_err());
        let pooled = max_pool_time(&x, 2, 2).unwrap();
        assert_eq!(pooled.rows(), 1); // remainder dropped
        assert_eq!(pooled.data(), &[2.0]);
    }

    #[test]
    fn pool_constant_sequence() {
        let x = Tensor::filled(&[12, 3], 0.75);
        let pooled = max_pool_time(&x, 4, 4).unwrap();
        assert_eq!(pooled.rows(), 3);
        assert!(pooled.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn pool_never_exceeds_input_max() {
        for seed in 0..5 {
            let x = rand_tensor(seed, 37, 4);
            let pooled = max_pool_time(&x, 5, 5).unwrap();
            for j in 0..4 {
                let col_max = (0..x.rows()).map(|r| x.at(r, j)).fold(f64::MIN, f64::max);
                for l in 0..pooled.rows() {
                    assert!(pooled.at(l, j) <= col_max);
                }
            }
        }
    }
}

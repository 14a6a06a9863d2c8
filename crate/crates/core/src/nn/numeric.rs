//! Order-independent floating point reductions.
//!
//! Several contracts in this crate are bit-exact under re-ordering of
//! sequence elements: self-attention must be permutation-equivariant and the
//! verification loss must be permutation-invariant, both tested with `==` on
//! doubles. Plain `f64` summation is not associative, so those reductions go
//! through a fixed-point accumulator whose result depends only on the
//! multiset of terms, not their order.

/// Sum of `terms`, independent of element order.
///
/// Terms are scaled by a power of two chosen from the (order-independent)
/// maximum magnitude, rounded to integers and added exactly in an `i128`.
/// The quantization is at ~2^-61 relative to the largest term, below one ulp
/// of the naive sum for any realistic term count.
pub fn det_sum(terms: &[f64]) -> f64 {
    let mut max_abs = 0.0f64;
    for &t in terms {
        let a = t.abs();
        if a > max_abs {
            max_abs = a;
        }
    }
    if max_abs == 0.0 {
        return 0.0;
    }
    if !max_abs.is_finite() || max_abs < 1e-270 {
        // Degenerate inputs: fall back to the naive sum. Non-finite sums are
        // rejected upstream; totals of sub-1e-270 terms underflow to ~0.
        return terms.iter().sum();
    }
    // Exponent of max_abs via the bit pattern (max_abs is normal here).
    let exp = ((max_abs.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let scale = 2f64.powi(61 - exp);
    let mut acc: i128 = 0;
    for &t in terms {
        acc += (t * scale).round_ties_even() as i128;
    }
    acc as f64 / scale
}

/// `Σ a[i] * b[i]`, order-independent in the same sense as [`det_sum`].
pub fn det_dot(a: &[f64], b: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(a.iter().zip(b).map(|(x, y)| x * y));
    det_sum(scratch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn random_terms(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn matches_naive_sum_closely() {
        for seed in 0..10 {
            let terms = random_terms(seed, 257);
            let naive: f64 = terms.iter().sum();
            let det = det_sum(&terms);
            assert!((naive - det).abs() <= 1e-12 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn bitwise_identical_under_permutation() {
        for seed in 0..20 {
            let terms = random_terms(seed, 131);
            let forward = det_sum(&terms);
            let mut reversed = terms.clone();
            reversed.reverse();
            assert_eq!(forward.to_bits(), det_sum(&reversed).to_bits());
            let mut rotated = terms.clone();
            rotated.rotate_left((seed as usize * 37) % terms.len());
            assert_eq!(forward.to_bits(), det_sum(&rotated).to_bits());
        }
    }

    #[test]
    fn zeros_and_degenerate() {
        assert_eq!(det_sum(&[]), 0.0);
        assert_eq!(det_sum(&[0.0, -0.0, 0.0]), 0.0);
        let tiny = vec![1e-300, -1e-300];
        assert_eq!(det_sum(&tiny), 0.0);
    }
}

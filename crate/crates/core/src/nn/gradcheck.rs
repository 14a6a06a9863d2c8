//! Central finite-difference verification of reverse-mode gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Perturbation step for central differences (double precision).
pub const FD_STEP: f64 = 1e-4;

/// Relative error with a floored denominator so near-zero gradient pairs
/// compare on an absolute scale.
pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub entries_checked: usize,
    pub tolerance: f64,
    /// `(input index, flat entry)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    /// Coordinates whose finite-difference interval straddles a subgradient
    /// point (max-pool tie, ReLU zero crossing): the loss has no derivative
    /// there, so they are excluded rather than compared. Detected by
    /// disagreement between the full-step and half-step central differences,
    /// without consulting the analytic gradient.
    pub excluded_kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    pub fn excluded_fraction(&self) -> f64 {
        if self.entries_checked == 0 {
            return 0.0;
        }
        self.excluded_kinks as f64 / self.entries_checked as f64
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} over {} entries, {} kink-excluded (tolerance {:.1e})",
            if self.passed() { "pass" } else { "FAIL" },
            self.max_rel_err,
            self.entries_checked,
            self.excluded_kinks,
            self.tolerance
        )
    }
}

/// True when the half-step and full-step central differences disagree beyond
/// truncation error, i.e. the interval contains a non-differentiable point.
fn is_kink(fd_full: f64, fd_half: f64) -> bool {
    (fd_full - fd_half).abs() > 1e-5 * (fd_full.abs() + fd_half.abs()).max(1e-2)
}

/// Check the gradient of a scalar-valued tape computation with respect to
/// every entry of every input tensor.
///
/// `build` receives a fresh tape plus leaf vars for the inputs (in order) and
/// returns the scalar root.
pub fn finite_diff_check<F>(build: F, inputs: &[Tensor], tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |which: usize, entry: usize, delta: f64| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut t = t.clone();
                if j == which {
                    t.data_mut()[entry] += delta;
                }
                tape.leaf(t, false)
            })
            .collect();
        let root = build(&mut tape, &vars);
        tape.value(root).item()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        entries_checked: 0,
        tolerance,
        worst: None,
        excluded_kinks: 0,
    };
    for (which, input) in inputs.iter().enumerate() {
        for entry in 0..input.len() {
            let plus = eval(which, entry, FD_STEP);
            let minus = eval(which, entry, -FD_STEP);
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let an = analytic[which].data()[entry];
            let re = relative_error(fd, an);
            report.entries_checked += 1;
            if re > report.max_rel_err {
                report.max_rel_err = re;
                report.worst = Some((which, entry));
            }
        }
    }
    report
}

/// Check parameter gradients of a composed loss against central differences.
///
/// Works on any context `M` holding a [`ParamStore`] (typically a model):
/// `get_store` exposes it for perturbation, `backward` zeroes grads and runs
/// the loss forward/backward (without mutating values or buffers), and
/// `value` evaluates the loss from current parameter values. Every entry of
/// every store index in `entries` is perturbed.
pub fn finite_diff_check_params<M, S, B, V>(
    ctx: &mut M,
    entries: &[usize],
    get_store: S,
    backward: B,
    value: V,
    tolerance: f64,
) -> GradCheckReport
where
    S: Fn(&mut M) -> &mut ParamStore,
    B: Fn(&mut M),
    V: Fn(&M) -> f64,
{
    backward(ctx);
    let analytic: Vec<Tensor> = {
        let store = get_store(ctx);
        entries.iter().map(|&i| store.entry(i).grad.clone()).collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        entries_checked: 0,
        tolerance,
        worst: None,
    };
    for (slot, &idx) in entries.iter().enumerate() {
        let len = get_store(ctx).entry(idx).value.len();
        for e in 0..len {
            let orig = get_store(ctx).entry(idx).value.data()[e];
            get_store(ctx).entry_mut(idx).value.data_mut()[e] = orig + FD_STEP;
            let plus = value(ctx);
            get_store(ctx).entry_mut(idx).value.data_mut()[e] = orig - FD_STEP;
            let minus = value(ctx);
            get_store(ctx).entry_mut(idx).value.data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let an = analytic[slot].data()[e];
            let re = relative_error(fd, an);
            report.entries_checked += 1;
            if re > report.max_rel_err {
                report.max_rel_err = re;
                report.worst = Some((idx, e));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::AttentionMode;
    use crate::rng::{seeded, uniform};

    fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = seeded(seed);
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
    }

    /// Reduce a matrix output to a scalar through a fixed random projection
    /// so every output entry influences the loss.
    fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
        let shape = tape.value(y).shape().to_vec();
        let r = tape.constant(rand_tensor(seed, &shape));
        let prod = tape.mul(y, r);
        tape.mean_all(prod)
    }

    #[test]
    fn linear_layer_gradients() {
        for seed in 0..5u64 {
            let x = rand_tensor(seed, &[4, 3]);
            let w = rand_tensor(seed + 50, &[3, 2]);
            let b = rand_tensor(seed + 100, &[2]);
            let report = finite_diff_check(
                |tape, vars| {
                    let y = tape.matmul_op(vars[0], vars[1]);
                    let y = tape.add_bias(y, vars[2]);
                    project(tape, y, 999)
                },
                &[x, w, b],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn attention_gradients() {
        for seed in 0..5u64 {
            let q = rand_tensor(seed, &[3, 2]);
            let k = rand_tensor(seed + 10, &[3, 2]);
            let v = rand_tensor(seed + 20, &[3, 2]);
            let report = finite_diff_check(
                |tape, vars| {
                    let y = tape.attention(vars[0], vars[1], vars[2], AttentionMode::Normal);
                    project(tape, y, 1234)
                },
                &[q, k, v],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn self_attention_shared_input_gradients() {
        for seed in 0..5u64 {
            let x = rand_tensor(seed + 7, &[4, 3]);
            let report = finite_diff_check(
                |tape, vars| {
                    let y = tape.attention(vars[0], vars[0], vars[0], AttentionMode::Normal);
                    project(tape, y, 77)
                },
                &[x],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn lstm_gradients() {
        for seed in 0..5u64 {
            let x = rand_tensor(seed, &[5, 3]);
            let w = rand_tensor(seed + 30, &[3, 8]);
            let u = rand_tensor(seed + 60, &[2, 8]);
            let b = rand_tensor(seed + 90, &[8]);
            let report = finite_diff_check(
                |tape, vars| {
                    let h = tape.lstm(vars[0], vars[1], vars[2], vars[3]);
                    project(tape, h, 4321)
                },
                &[x, w, u, b],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn max_pool_gradients_away_from_ties() {
        // Random continuous inputs tie with probability zero; exact ties are
        // excluded by contract (first-index subgradient).
        for seed in 0..5u64 {
            let x = rand_tensor(seed + 3, &[8, 3]);
            let report = finite_diff_check(
                |tape, vars| {
                    let y = tape.max_pool_time(vars[0], 2, 2);
                    project(tape, y, 55)
                },
                &[x],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn conv_batchnorm_relu_gradients() {
        for seed in 0..5u64 {
            let x = rand_tensor(seed, &[6, 3]);
            let w = rand_tensor(seed + 40, &[5 * 3, 4]);
            let b = rand_tensor(seed + 80, &[4]);
            let gamma = rand_tensor(seed + 120, &[4]).map(|v| 1.0 + 0.3 * v);
            let beta = rand_tensor(seed + 160, &[4]);
            let report = finite_diff_check(
                |tape, vars| {
                    let y = tape.conv1d(vars[0], vars[1], vars[2], 5, 2);
                    let (y, _, _) = tape.batch_norm_train(y, vars[3], vars[4], 1e-5);
                    let y = tape.relu(y);
                    project(tape, y, 31)
                },
                &[x.clone(), w.clone(), b.clone(), gamma.clone(), beta.clone()],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn normalize_and_losses_gradients() {
        for seed in 0..5u64 {
            let x = rand_tensor(seed + 11, &[1, 6]);
            let target = rand_tensor(seed + 500, &[1, 6]);
            let report = finite_diff_check(
                |tape, vars| {
                    let y = tape.l2_normalize_row(vars[0]);
                    let t = tape.constant(target.clone());
                    let d = tape.sub(y, t);
                    let sq = tape.square(d);
                    let l2 = tape.mean_all(sq);
                    let ab = tape.abs_op(d);
                    let l1 = tape.mean_all(ab);
                    tape.add(l2, l1)
                },
                &[x],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn softmax_ce_gradients() {
        for seed in 0..5u64 {
            let logits = rand_tensor(seed + 13, &[4, 3]);
            let report = finite_diff_check(
                |tape, vars| tape.softmax_cross_entropy(vars[0], &[0, 2, 1, 2]),
                &[logits],
                1e-5,
            );
            assert!(report.passed(), "seed {seed}: {report}");
        }
    }
}

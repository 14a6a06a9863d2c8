//! Parameterized layers over the tape, plus the forward context that carries
//! binding mode (trainable vs frozen) and phase (train vs eval batch norm).

use crate::rng::{uniform, Rng};

use super::params::{ParamKind, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Whether parameters bound during a forward pass accumulate gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BindMode {
    Trainable,
    Frozen,
}

/// Batch-norm behaviour: `Train` uses the batch's own statistics and records
/// running updates; `Eval` normalizes with the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Forward-pass context. Batch-norm running-statistic updates are queued here
/// (the store is borrowed immutably during the pass) and applied afterwards
/// with [`Ctx::take_buffer_updates`].
pub struct Ctx<'t, 's> {
    pub tape: &'t mut Tape,
    pub store: &'s ParamStore,
    pub mode: BindMode,
    pub phase: Phase,
    buffer_updates: Vec<(usize, Vec<f64>)>,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t mut Tape, store: &'s ParamStore, mode: BindMode, phase: Phase) -> Self {
        Ctx {
            tape,
            store,
            mode,
            phase,
            buffer_updates: Vec::new(),
        }
    }

    pub fn bind(&mut self, entry: usize) -> Var {
        self.tape
            .bind_param(self.store, entry, self.mode == BindMode::Trainable)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    fn queue_buffer_update(&mut self, entry: usize, values: Vec<f64>) {
        self.buffer_updates.push((entry, values));
    }

    /// Pending `(entry, new_values)` running-statistic updates, in forward
    /// order. Apply with [`apply_buffer_updates`].
    pub fn take_buffer_updates(&mut self) -> Vec<(usize, Vec<f64>)> {
        std::mem::take(&mut self.buffer_updates)
    }
}

/// Write queued batch-norm updates back into the store.
pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(usize, Vec<f64>)>) {
    for (entry, values) in updates {
        store
            .entry_mut(entry)
            .value
            .data_mut()
            .copy_from_slice(&values);
    }
}

fn xavier(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| uniform(rng, -a, a)).collect();
    Tensor::from_vec(shape, data)
}

/// Fully connected layer `y = x W + b`.
#[derive(Clone)]
pub struct Linear {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.register(
            format!("{name}.w"),
            xavier(rng, &[in_dim, out_dim], in_dim, out_dim),
            ParamKind::Weight,
        );
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[out_dim]), ParamKind::Weight);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let w = cx.bind(self.w);
        let b = cx.bind(self.b);
        let y = cx.tape.matmul_op(x, w);
        cx.tape.add_bias(y, b)
    }
}

/// 1-D convolution over time with zero "same" padding for odd kernels.
#[derive(Clone)]
pub struct Conv1d {
    w: usize,
    b: usize,
    pub kernel: usize,
    pub pad: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv1d {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Self {
        let fan_in = kernel * in_ch;
        let w = store.register(
            format!("{name}.w"),
            xavier(rng, &[kernel * in_ch, out_ch], fan_in, out_ch),
            ParamKind::Weight,
        );
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[out_ch]), ParamKind::Weight);
        Conv1d {
            w,
            b,
            kernel,
            pad: (kernel - 1) / 2,
            in_ch,
            out_ch,
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let w = cx.bind(self.w);
        let b = cx.bind(self.b);
        cx.tape.conv1d(x, w, b, self.kernel, self.pad)
    }
}

/// Per-channel batch normalization over the time axis.
#[derive(Clone)]
pub struct BatchNorm1d {
    gamma: usize,
    beta: usize,
    running_mean: Option<usize>,
    running_var: Option<usize>,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    /// Batch norm with running statistics used at eval time.
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self::init_inner(store, name, channels, true)
    }

    /// Instance-norm variant: always normalizes with the current input's own
    /// per-channel statistics and keeps no running buffers. Used in the
    /// content encoder, where per-utterance normalization strips static
    /// (speaker-correlated) channel offsets in every phase.
    pub fn init_instance(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self::init_inner(store, name, channels, false)
    }

    fn init_inner(store: &mut ParamStore, name: &str, channels: usize, track_running: bool) -> Self {
        let gamma = store.register(
            format!("{name}.gamma"),
            Tensor::filled(&[channels], 1.0),
            ParamKind::Weight,
        );
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Weight);
        let (running_mean, running_var) = if track_running {
            (
                Some(store.register(
                    format!("{name}.running_mean"),
                    Tensor::zeros(&[channels]),
                    ParamKind::Buffer,
                )),
                Some(store.register(
                    format!("{name}.running_var"),
                    Tensor::filled(&[channels], 1.0),
                    ParamKind::Buffer,
                )),
            )
        } else {
            (None, None)
        };
        BatchNorm1d {
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let gamma = cx.bind(self.gamma);
        let beta = cx.bind(self.beta);
        let use_batch_stats = cx.phase == Phase::Train || self.running_mean.is_none();
        if use_batch_stats {
            let (y, mean, var) = cx.tape.batch_norm_train(x, gamma, beta, self.eps);
            if let (Some(rm), Some(rv), Phase::Train) = (self.running_mean, self.running_var, cx.phase) {
                let m = self.momentum;
                let old_mean = cx.store.entry(rm).value.data().to_vec();
                let old_var = cx.store.entry(rv).value.data().to_vec();
                let new_mean: Vec<f64> = old_mean
                    .iter()
                    .zip(&mean)
                    .map(|(o, b)| (1.0 - m) * o + m * b)
                    .collect();
                let new_var: Vec<f64> = old_var
                    .iter()
                    .zip(&var)
                    .map(|(o, b)| (1.0 - m) * o + m * b)
                    .collect();
                cx.queue_buffer_update(rm, new_mean);
                cx.queue_buffer_update(rv, new_var);
            }
            y
        } else {
            let rm = self.running_mean.expect("eval without running stats");
            let rv = self.running_var.expect("eval without running stats");
            let mean = cx.store.entry(rm).value.data().to_vec();
            let var = cx.store.entry(rv).value.data().to_vec();
            cx.tape.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
        }
    }
}

/// Single-direction LSTM layer.
#[derive(Clone)]
pub struct Lstm {
    w: usize,
    u: usize,
    b: usize,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, name: &str, in_dim: usize, hidden: usize) -> Self {
        let w = store.register(
            format!("{name}.w_ih"),
            xavier(rng, &[in_dim, 4 * hidden], in_dim, hidden),
            ParamKind::Weight,
        );
        let u = store.register(
            format!("{name}.w_hh"),
            xavier(rng, &[hidden, 4 * hidden], hidden, hidden),
            ParamKind::Weight,
        );
        // Forget-gate bias starts at 1 so memory is initially retained.
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for j in 0..hidden {
            bias.data_mut()[hidden + j] = 1.0;
        }
        let b = store.register(format!("{name}.b"), bias, ParamKind::Weight);
        Lstm { w, u, b, in_dim, hidden }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let w = cx.bind(self.w);
        let u = cx.bind(self.u);
        let b = cx.bind(self.b);
        cx.tape.lstm(x, w, u, b)
    }
}

/// Bidirectional LSTM: forward and time-reversed passes concatenated per
/// frame into a `T×2H` sequence.
#[derive(Clone)]
pub struct Blstm {
    fwd: Lstm,
    bwd: Lstm,
    pub hidden: usize,
}

impl Blstm {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, name: &str, in_dim: usize, hidden: usize) -> Self {
        let fwd = Lstm::init(store, rng, &format!("{name}.fwd"), in_dim, hidden);
        let bwd = Lstm::init(store, rng, &format!("{name}.bwd"), in_dim, hidden);
        Blstm { fwd, bwd, hidden }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let hf = self.fwd.forward(cx, x);
        let xr = cx.tape.reverse_rows(x);
        let hb_rev = self.bwd.forward(cx, xr);
        let hb = cx.tape.reverse_rows(hb_rev);
        cx.tape.concat_cols(hf, hb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn linear_forward_shape() {
        let mut store = ParamStore::new();
        let mut rng = seeded(0);
        let lin = Linear::init(&mut store, &mut rng, "lin", 3, 5);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, BindMode::Trainable, Phase::Train);
        let x = cx.constant(Tensor::zeros(&[4, 3]));
        let y = lin.forward(&mut cx, x);
        assert_eq!(cx.tape.value(y).shape(), &[4, 5]);
    }

    #[test]
    fn blstm_concatenates_directions() {
        let mut store = ParamStore::new();
        let mut rng = seeded(1);
        let blstm = Blstm::init(&mut store, &mut rng, "bl", 4, 3);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, BindMode::Trainable, Phase::Train);
        let x = cx.constant(Tensor::filled(&[6, 4], 0.1));
        let y = blstm.forward(&mut cx, x);
        assert_eq!(cx.tape.value(y).shape(), &[6, 6]);
    }

    #[test]
    fn batch_norm_train_normalizes_and_queues_updates() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::init(&mut store, "bn", 2);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, BindMode::Trainable, Phase::Train);
        let x = cx.constant(Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 30.0]]));
        let y = bn.forward(&mut cx, x);
        let yv = cx.tape.value(y);
        for c in 0..2 {
            let mean = (yv.at(0, c) + yv.at(1, c)) / 2.0;
            assert!(mean.abs() < 1e-9);
        }
        let updates = cx.take_buffer_updates();
        assert_eq!(updates.len(), 2);
        apply_buffer_updates(&mut store, updates);
        let rm = store.get("bn.running_mean").unwrap().value.data();
        assert!((rm[0] - 0.1 * 2.0).abs() < 1e-12); // momentum 0.1, batch mean 2
    }

    #[test]
    fn frozen_mode_binds_without_grads() {
        let mut store = ParamStore::new();
        let mut rng = seeded(2);
        let lin = Linear::init(&mut store, &mut rng, "l", 2, 2);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, BindMode::Frozen, Phase::Eval);
        let x = cx.constant(Tensor::filled(&[1, 2], 1.0));
        let y = lin.forward(&mut cx, x);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss);
        tape.accumulate_param_grads(&mut store, &grads);
        assert_eq!(store.group_max_abs_grad(""), 0.0);
    }
}

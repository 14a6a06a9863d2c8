//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Every forward pass builds a fresh [`Tape`]; ops push nodes holding the
//! computed value plus whatever caches their backward needs. Gradients flow
//! only into nodes whose `needs_grad` flag is set, which is how parameter
//! freezing works: a parameter bound with `trainable = false` participates in
//! the forward computation and passes gradients through to its consumers'
//! other inputs, but never accumulates a gradient itself.

use super::ops::{attention_kernel, max_pool_kernel};
use super::params::ParamStore;
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward rule of one op: given the node's value, its incoming gradient and
/// the parent values, return one gradient contribution per parent (`None` for
/// parents the op does not differentiate through). `need[i]` is false when
/// parent `i` will discard its gradient; ops may skip that work.
pub trait Backward {
    fn backward(
        &self,
        out_value: &Tensor,
        out_grad: &Tensor,
        parents: &[&Tensor],
        need: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    needs_grad: bool,
    op: Option<Box<dyn Backward>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }
}

struct Binding {
    entry: usize,
    var: Var,
    trainable: bool,
}

/// Attention weight selection; `Identity` is a wiring-test hook that bypasses
/// the softmax and uses the exact identity matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Normal,
    Identity,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<Binding>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a constant or differentiable leaf.
    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite leaf");
        self.nodes.push(Node {
            value,
            parents: vec![],
            needs_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Bind a parameter-store entry onto the tape. Repeated binds of the same
    /// entry with the same trainability reuse the existing node.
    pub fn bind_param(&mut self, store: &ParamStore, entry: usize, trainable: bool) -> Var {
        if let Some(b) = self
            .bindings
            .iter()
            .find(|b| b.entry == entry && b.trainable == trainable)
        {
            return b.var;
        }
        let var = self.leaf(store.entry(entry).value.clone(), trainable);
        self.bindings.push(Binding {
            entry,
            var,
            trainable,
        });
        var
    }

    /// Add gradients of trainable bindings into the store's grad buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore, grads: &Grads) {
        for b in &self.bindings {
            if !b.trainable {
                continue;
            }
            if let Some(g) = grads.get(b.var) {
                store.entry_mut(b.entry).grad.add_assign(g);
            }
        }
    }

    /// True if any binding of this entry on this tape was trainable.
    pub fn entry_bound_trainable(&self, entry: usize) -> bool {
        self.bindings
            .iter()
            .any(|b| b.entry == entry && b.trainable)
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, op: Box<dyn Backward>) -> Var {
        debug_assert!(value.all_finite(), "non-finite op output");
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            needs_grad,
            op: Some(op),
        });
        Var(self.nodes.len() - 1)
    }

    /// Push a custom fused op (used by e.g. the verification loss).
    pub fn push_op(&mut self, value: Tensor, parents: &[Var], op: Box<dyn Backward>) -> Var {
        self.push(value, parents.iter().map(|v| v.0).collect(), op)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Grads {
        let root_node = &self.nodes[root.0];
        assert!(
            root_node.value.is_scalar(),
            "backward root must be a scalar, got shape {:?}",
            root_node.value.shape()
        );
        let mut slots: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        slots.resize_with(root.0 + 1, || None);
        slots[root.0] = Some(Tensor::filled(root_node.value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if node.op.is_none() || !node.needs_grad {
                continue;
            }
            let Some(gout) = slots[i].take() else { continue };
            let parent_vals: Vec<&Tensor> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let need: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].needs_grad)
                .collect();
            let contribs =
                node.op
                    .as_ref()
                    .unwrap()
                    .backward(&node.value, &gout, &parent_vals, &need);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (contrib, &p) in contribs.into_iter().zip(node.parents.iter()) {
                let Some(c) = contrib else { continue };
                if !self.nodes[p].needs_grad {
                    continue;
                }
                match &mut slots[p] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Grads { slots }
    }

    // ---- elementwise and shape ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, vec![a.0, b.0], Box::new(AddOp))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(out, vec![a.0, b.0], Box::new(SubOp))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_vec(av.shape(), data);
        self.push(out, vec![a.0, b.0], Box::new(MulOp))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, vec![a.0], Box::new(ScaleOp { c }))
    }

    /// Elementwise `a*x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        let out = self.value(x).map(|v| a * v + b);
        self.push(out, vec![x.0], Box::new(ScaleOp { c: a }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, vec![a.0], Box::new(ReluOp))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid_scalar);
        self.push(out, vec![a.0], Box::new(SigmoidOp))
    }

    pub fn tanh_op(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, vec![a.0], Box::new(TanhOp))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, vec![a.0], Box::new(SquareOp))
    }

    pub fn abs_op(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, vec![a.0], Box::new(AbsOp))
    }

    /// Mean over all entries, producing a scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.len() as f64;
        let out = Tensor::scalar(av.data().iter().sum::<f64>() / n);
        self.push(out, vec![a.0], Box::new(MeanAllOp))
    }

    /// `x (T×d) + bias (d)`: bias added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(xv.cols(), bv.len(), "add_bias width mismatch");
        let cols = xv.cols();
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let _ = cols;
        self.push(out, vec![x.0, b.0], Box::new(AddBiasOp))
    }

    /// Repeat a single-row tensor to `rows` rows.
    pub fn broadcast_row(&mut self, v: Var, rows: usize) -> Var {
        let vv = self.value(v);
        assert_eq!(vv.rows(), 1, "broadcast_row expects a single row");
        let d = vv.cols();
        let mut out = Tensor::zeros(&[rows, d]);
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(&vv.data()[..d]);
        }
        self.push(out, vec![v.0], Box::new(BroadcastRowOp))
    }

    /// Concatenate along columns: `(T×a, T×b) -> T×(a+b)`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let (ca, cb) = (av.cols(), bv.cols());
        let rows = av.rows();
        let mut out = Tensor::zeros(&[rows, ca + cb]);
        for r in 0..rows {
            out.row_mut(r)[..ca].copy_from_slice(av.row(r));
            out.row_mut(r)[ca..].copy_from_slice(bv.row(r));
        }
        self.push(out, vec![a.0, b.0], Box::new(ConcatColsOp { ca }))
    }

    pub fn matmul_op(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, vec![a.0, b.0], Box::new(MatMulOp))
    }

    /// Extract row `idx` as a `1×d` tensor.
    pub fn row(&mut self, x: Var, idx: usize) -> Var {
        let xv = self.value(x);
        assert!(idx < xv.rows(), "row index out of range");
        let out = Tensor::from_vec(&[1, xv.cols()], xv.row(idx).to_vec());
        self.push(out, vec![x.0], Box::new(RowOp { idx }))
    }

    /// Stack `1×d` rows into an `n×d` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let d = self.value(rows[0]).cols();
        let mut out = Tensor::zeros(&[rows.len(), d]);
        for (r, &v) in rows.iter().enumerate() {
            let vv = self.value(v);
            assert_eq!(vv.rows(), 1, "stack_rows expects single-row inputs");
            assert_eq!(vv.cols(), d, "stack_rows width mismatch");
            out.row_mut(r).copy_from_slice(vv.row(0));
        }
        self.push(
            out,
            rows.iter().map(|v| v.0).collect(),
            Box::new(StackRowsOp { d }),
        )
    }

    /// Reverse row order (time reversal for the backward LSTM direction).
    pub fn reverse_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (t, d) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(&[t, d]);
        for r in 0..t {
            out.row_mut(r).copy_from_slice(xv.row(t - 1 - r));
        }
        self.push(out, vec![x.0], Box::new(ReverseRowsOp))
    }

    /// L2-normalize a single-row tensor.
    pub fn l2_normalize_row(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1, "l2_normalize_row expects a single row");
        let norm = xv.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let clamped = norm.max(NORM_EPS);
        let out = xv.map(|v| v / clamped);
        self.push(out, vec![x.0], Box::new(L2NormalizeOp { norm: clamped }))
    }

    /// Repeat each row `factor` times, then truncate or edge-pad to exactly
    /// `out_rows` rows.
    pub fn upsample_repeat(&mut self, x: Var, factor: usize, out_rows: usize) -> Var {
        let xv = self.value(x);
        let (l, d) = (xv.rows(), xv.cols());
        assert!(l > 0 && factor > 0 && out_rows > 0, "upsample_repeat empty");
        let mut out = Tensor::zeros(&[out_rows, d]);
        for r in 0..out_rows {
            let src = (r / factor).min(l - 1);
            out.row_mut(r).copy_from_slice(xv.row(src));
        }
        self.push(
            out,
            vec![x.0],
            Box::new(UpsampleRepeatOp { factor, src_rows: l }),
        )
    }

    /// Non-overlapping temporal max pooling (window == stride); a trailing
    /// remainder shorter than the window is dropped. Gradient goes to the
    /// first maximal element of each window.
    pub fn max_pool_time(&mut self, x: Var, window: usize, stride: usize) -> Var {
        assert!(window >= 1 && stride >= 1, "max_pool_time window/stride");
        assert_eq!(window, stride, "max_pool_time requires window == stride");
        let xv = self.value(x);
        let (out, argmax) = max_pool_kernel(xv, window);
        let rows = xv.rows();
        self.push(
            out,
            vec![x.0],
            Box::new(MaxPoolOp {
                argmax,
                in_rows: rows,
            }),
        )
    }

    /// Scaled dot-product self-attention; returns the context sequence.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mode: AttentionMode) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let t = qv.rows();
        assert_eq!(kv.rows(), t, "attention sequence length mismatch (K)");
        assert_eq!(vv.rows(), t, "attention sequence length mismatch (V)");
        assert_eq!(qv.cols(), kv.cols(), "attention d_k mismatch");
        match mode {
            AttentionMode::Identity => {
                let out = vv.clone();
                self.push(out, vec![q.0, k.0, v.0], Box::new(AttentionIdentityOp))
            }
            AttentionMode::Normal => {
                let (ctx, weights) = attention_kernel(qv, kv, vv);
                let dk = qv.cols();
                self.push(
                    ctx,
                    vec![q.0, k.0, v.0],
                    Box::new(AttentionOp { weights, dk }),
                )
            }
        }
    }

    /// 1-D convolution over time. `x: T×Cin`, `w: (K*Cin)×Cout`, `b: Cout`;
    /// zero padding of `pad` frames on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, pad: usize) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (t, in_ch) = (xv.rows(), xv.cols());
        assert_eq!(wv.rows(), kernel * in_ch, "conv1d weight rows");
        let out_ch = wv.cols();
        assert_eq!(bv.len(), out_ch, "conv1d bias length");
        assert!(t + 2 * pad >= kernel, "conv1d input shorter than kernel");
        let t_out = t + 2 * pad - kernel + 1;
        let mut xcol = Tensor::zeros(&[t_out, kernel * in_ch]);
        for to in 0..t_out {
            let dst = xcol.row_mut(to);
            for kk in 0..kernel {
                let ti = to + kk;
                if ti < pad || ti - pad >= t {
                    continue; // zero padding
                }
                dst[kk * in_ch..(kk + 1) * in_ch].copy_from_slice(xv.row(ti - pad));
            }
        }
        let mut out = matmul(&xcol, wv);
        for r in 0..t_out {
            for (o, bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(
            out,
            vec![x.0, w.0, b.0],
            Box::new(Conv1dOp {
                xcol,
                kernel,
                pad,
                in_rows: t,
                in_ch,
            }),
        )
    }

    /// Batch normalization over the time axis using the batch's own
    /// statistics; returns the output plus the (biased) batch mean/variance
    /// per channel so the caller can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xv = self.value(x);
        let (t, c) = (xv.rows(), xv.cols());
        let gv = self.value(gamma);
        let bv = self.value(beta);
        assert_eq!(gv.len(), c, "batch_norm gamma length");
        assert_eq!(bv.len(), c, "batch_norm beta length");
        let tn = t as f64;
        let mut mean = vec![0.0; c];
        for r in 0..t {
            for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= tn;
        }
        let mut var = vec![0.0; c];
        for r in 0..t {
            for (j, &v) in xv.row(r).iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= tn;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(&[t, c]);
        let mut out = Tensor::zeros(&[t, c]);
        for r in 0..t {
            let xr = xv.row(r);
            for j in 0..c {
                let h = (xr[j] - mean[j]) * inv_std[j];
                x_hat.row_mut(r)[j] = h;
                out.row_mut(r)[j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let var_out = var.clone();
        let v = self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Box::new(BatchNormTrainOp { x_hat, inv_std }),
        );
        (v, mean, var_out)
    }

    /// Batch normalization with externally supplied (frozen) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Var {
        let xv = self.value(x);
        let (t, c) = (xv.rows(), xv.cols());
        assert_eq!(mean.len(), c, "batch_norm_eval mean length");
        assert_eq!(var.len(), c, "batch_norm_eval var length");
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(&[t, c]);
        let mut out = Tensor::zeros(&[t, c]);
        for r in 0..t {
            let xr = xv.row(r);
            for j in 0..c {
                let h = (xr[j] - mean[j]) * inv_std[j];
                x_hat.row_mut(r)[j] = h;
                out.row_mut(r)[j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Box::new(BatchNormEvalOp { x_hat, inv_std }),
        )
    }

    /// Single-direction LSTM over a `T×in` sequence. Gate layout in the
    /// packed `4H` dimension is `[input, forget, cell-candidate, output]`:
    ///   i = σ(x·Wi + h·Ui + bi), f = σ(...), g = tanh(...), o = σ(...)
    ///   c_t = f ⊙ c_{t-1} + i ⊙ g,  h_t = o ⊙ tanh(c_t)
    /// `w: in×4H`, `u: H×4H`, `b: 4H`. Initial hidden and cell state are 0.
    pub fn lstm(&mut self, x: Var, w: Var, u: Var, b: Var) -> Var {
        let (xv, wv, uv, bv) = (self.value(x), self.value(w), self.value(u), self.value(b));
        let (t, in_dim) = (xv.rows(), xv.cols());
        let h = uv.rows();
        assert_eq!(wv.rows(), in_dim, "lstm W rows");
        assert_eq!(wv.cols(), 4 * h, "lstm W cols");
        assert_eq!(uv.cols(), 4 * h, "lstm U cols");
        assert_eq!(bv.len(), 4 * h, "lstm bias length");
        let mut pre = matmul(xv, wv); // T×4H
        let mut gates = Tensor::zeros(&[t, 4 * h]);
        let mut cells = Tensor::zeros(&[t, h]);
        let mut tanh_c = Tensor::zeros(&[t, h]);
        let mut hidden = Tensor::zeros(&[t, h]);
        let ud = uv.data();
        for step in 0..t {
            // pre[step] += h_{t-1} @ U + b
            if step > 0 {
                let (done, rest) = hidden.data().split_at(step * h);
                let prev = &done[(step - 1) * h..];
                let _ = rest;
                let prev = prev.to_vec();
                let pr = pre.row_mut(step);
                for (hh, &ph) in prev.iter().enumerate() {
                    let urow = &ud[hh * 4 * h..(hh + 1) * 4 * h];
                    for (p, &uu) in pr.iter_mut().zip(urow) {
                        *p += ph * uu;
                    }
                }
            }
            {
                let pr = pre.row_mut(step);
                for (p, &bb) in pr.iter_mut().zip(bv.data()) {
                    *p += bb;
                }
            }
            let pr = pre.row(step).to_vec();
            let gr = gates.row_mut(step);
            for j in 0..h {
                gr[j] = sigmoid_scalar(pr[j]); // i
                gr[h + j] = sigmoid_scalar(pr[h + j]); // f
                gr[2 * h + j] = pr[2 * h + j].tanh(); // g
                gr[3 * h + j] = sigmoid_scalar(pr[3 * h + j]); // o
            }
            for j in 0..h {
                let c_prev = if step == 0 { 0.0 } else { cells.at(step - 1, j) };
                let i_g = gates.at(step, j);
                let f_g = gates.at(step, h + j);
                let g_g = gates.at(step, 2 * h + j);
                let o_g = gates.at(step, 3 * h + j);
                let c = f_g * c_prev + i_g * g_g;
                cells.set(step, j, c);
                let tc = c.tanh();
                tanh_c.set(step, j, tc);
                hidden.set(step, j, o_g * tc);
            }
        }
        self.push(
            hidden,
            vec![x.0, w.0, u.0, b.0],
            Box::new(LstmOp {
                gates,
                cells,
                tanh_c,
                hidden_dim: h,
            }),
        )
    }

    /// Mean softmax cross-entropy of `logits: N×C` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        assert_eq!(labels.len(), n, "label count mismatch");
        assert!(labels.iter().all(|&y| y < c), "label out of range");
        let mut probs = Tensor::zeros(&[n, c]);
        let mut total = 0.0;
        for i in 0..n {
            let row = lv.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &x in row {
                denom += (x - m).exp();
            }
            let lse = m + denom.ln();
            total += lse - row[labels[i]];
            for (j, &x) in row.iter().enumerate() {
                probs.set(i, j, (x - lse).exp());
            }
        }
        let out = Tensor::scalar(total / n as f64);
        self.push(
            out,
            vec![logits.0],
            Box::new(SoftmaxCeOp {
                probs,
                labels: labels.to_vec(),
            }),
        )
    }
}

pub(crate) const NORM_EPS: f64 = 1e-12;

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---- op implementations ----

struct AddOp;
impl Backward for AddOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            need[0].then(|| g.clone()),
            need[1].then(|| g.clone()),
        ]
    }
}

struct SubOp;
impl Backward for SubOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            need[0].then(|| g.clone()),
            need[1].then(|| g.map(|x| -x)),
        ]
    }
}

struct MulOp;
impl Backward for MulOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let da = need[0].then(|| {
            let mut d = g.clone();
            for (x, y) in d.data_mut().iter_mut().zip(p[1].data()) {
                *x *= y;
            }
            d
        });
        let db = need[1].then(|| {
            let mut d = g.clone();
            for (x, y) in d.data_mut().iter_mut().zip(p[0].data()) {
                *x *= y;
            }
            d
        });
        vec![da, db]
    }
}

struct ScaleOp {
    c: f64,
}
impl Backward for ScaleOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| g.map(|x| x * self.c))]
    }
}

struct ReluOp;
impl Backward for ReluOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(p[0].data()) {
                if v <= 0.0 {
                    *x = 0.0;
                }
            }
            d
        })]
    }
}

struct SigmoidOp;
impl Backward for SigmoidOp {
    fn backward(&self, o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = g.clone();
            for (x, &y) in d.data_mut().iter_mut().zip(o.data()) {
                *x *= y * (1.0 - y);
            }
            d
        })]
    }
}

struct TanhOp;
impl Backward for TanhOp {
    fn backward(&self, o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = g.clone();
            for (x, &y) in d.data_mut().iter_mut().zip(o.data()) {
                *x *= 1.0 - y * y;
            }
            d
        })]
    }
}

struct SquareOp;
impl Backward for SquareOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(p[0].data()) {
                *x *= 2.0 * v;
            }
            d
        })]
    }
}

struct AbsOp;
impl Backward for AbsOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = g.clone();
            for (x, &v) in d.data_mut().iter_mut().zip(p[0].data()) {
                *x *= if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            d
        })]
    }
}

struct MeanAllOp;
impl Backward for MeanAllOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let n = p[0].len() as f64;
            Tensor::filled(p[0].shape(), g.item() / n)
        })]
    }
}

struct AddBiasOp;
impl Backward for AddBiasOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let dx = need[0].then(|| g.clone());
        let db = need[1].then(|| {
            let mut d = Tensor::zeros(p[1].shape());
            for r in 0..g.rows() {
                for (acc, &gg) in d.data_mut().iter_mut().zip(g.row(r)) {
                    *acc += gg;
                }
            }
            d
        });
        vec![dx, db]
    }
}

struct BroadcastRowOp;
impl Backward for BroadcastRowOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = Tensor::zeros(p[0].shape());
            for r in 0..g.rows() {
                for (acc, &gg) in d.data_mut().iter_mut().zip(g.row(r)) {
                    *acc += gg;
                }
            }
            d
        })]
    }
}

struct ConcatColsOp {
    ca: usize,
}
impl Backward for ConcatColsOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let rows = g.rows();
        let da = need[0].then(|| {
            let mut d = Tensor::zeros(p[0].shape());
            for r in 0..rows {
                d.row_mut(r).copy_from_slice(&g.row(r)[..self.ca]);
            }
            d
        });
        let db = need[1].then(|| {
            let mut d = Tensor::zeros(p[1].shape());
            for r in 0..rows {
                d.row_mut(r).copy_from_slice(&g.row(r)[self.ca..]);
            }
            d
        });
        vec![da, db]
    }
}

struct MatMulOp;
impl Backward for MatMulOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let da = need[0].then(|| matmul_nt(g, p[1]));
        let db = need[1].then(|| matmul_tn(p[0], g));
        vec![da, db]
    }
}

struct RowOp {
    idx: usize,
}
impl Backward for RowOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = Tensor::zeros(p[0].shape());
            d.row_mut(self.idx).copy_from_slice(g.row(0));
            d
        })]
    }
}

struct StackRowsOp {
    d: usize,
}
impl Backward for StackRowsOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        need.iter()
            .enumerate()
            .map(|(r, &n)| {
                n.then(|| Tensor::from_vec(&[1, self.d], g.row(r).to_vec()))
            })
            .collect()
    }
}

struct ReverseRowsOp;
impl Backward for ReverseRowsOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let t = p[0].rows();
            let mut d = Tensor::zeros(p[0].shape());
            for r in 0..t {
                d.row_mut(r).copy_from_slice(g.row(t - 1 - r));
            }
            d
        })]
    }
}

struct L2NormalizeOp {
    norm: f64,
}
impl Backward for L2NormalizeOp {
    fn backward(&self, o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            // dx = (g - y (y·g)) / norm
            let ydotg: f64 = o.data().iter().zip(g.data()).map(|(y, gg)| y * gg).sum();
            let mut d = g.clone();
            for (x, &y) in d.data_mut().iter_mut().zip(o.data()) {
                *x = (*x - y * ydotg) / self.norm;
            }
            d
        })]
    }
}

struct UpsampleRepeatOp {
    factor: usize,
    src_rows: usize,
}
impl Backward for UpsampleRepeatOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let mut d = Tensor::zeros(p[0].shape());
            for r in 0..g.rows() {
                let src = (r / self.factor).min(self.src_rows - 1);
                for (acc, &gg) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                    *acc += gg;
                }
            }
            d
        })]
    }
}

struct MaxPoolOp {
    argmax: Vec<usize>, // flat L*d indices into the input rows
    in_rows: usize,
}
impl Backward for MaxPoolOp {
    fn backward(&self, o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let d = o.cols();
            let mut dx = Tensor::zeros(p[0].shape());
            let _ = self.in_rows;
            for l in 0..o.rows() {
                for j in 0..d {
                    let src_row = self.argmax[l * d + j];
                    dx.row_mut(src_row)[j] += g.at(l, j);
                }
            }
            dx
        })]
    }
}

struct AttentionIdentityOp;
impl Backward for AttentionIdentityOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, _p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![None, None, need[2].then(|| g.clone())]
    }
}

struct AttentionOp {
    weights: Tensor, // T×T row-stochastic
    dk: usize,
}
impl Backward for AttentionOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let (qv, kv, vv) = (p[0], p[1], p[2]);
        let t = qv.rows();
        let dv = need[2].then(|| matmul_tn(&self.weights, g));
        let (dq, dk_grad) = if need[0] || need[1] {
            let dw = matmul_nt(g, vv); // T×T
            // softmax backward per row: ds = w ⊙ (dw - Σ_j w_j dw_j)
            let mut ds = Tensor::zeros(&[t, t]);
            for i in 0..t {
                let wrow = self.weights.row(i);
                let dwrow = dw.row(i);
                let r: f64 = wrow.iter().zip(dwrow).map(|(w, d)| w * d).sum();
                for j in 0..t {
                    ds.set(i, j, wrow[j] * (dwrow[j] - r));
                }
            }
            let alpha = 1.0 / (self.dk as f64).sqrt();
            ds.scale_in_place(alpha);
            let dq = need[0].then(|| matmul(&ds, kv));
            let dk_grad = need[1].then(|| matmul_tn(&ds, qv));
            (dq, dk_grad)
        } else {
            (None, None)
        };
        vec![dq, dk_grad, dv]
    }
}

struct Conv1dOp {
    xcol: Tensor, // T_out×(K*Cin)
    kernel: usize,
    pad: usize,
    in_rows: usize,
    in_ch: usize,
}
impl Backward for Conv1dOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let dw = need[1].then(|| matmul_tn(&self.xcol, g));
        let db = need[2].then(|| {
            let mut d = Tensor::zeros(p[2].shape());
            for r in 0..g.rows() {
                for (acc, &gg) in d.data_mut().iter_mut().zip(g.row(r)) {
                    *acc += gg;
                }
            }
            d
        });
        let dx = need[0].then(|| {
            let dxcol = matmul_nt(g, p[1]); // T_out×(K*Cin)
            let mut dx = Tensor::zeros(p[0].shape());
            for to in 0..dxcol.rows() {
                let row = dxcol.row(to);
                for kk in 0..self.kernel {
                    let ti = to + kk;
                    if ti < self.pad || ti - self.pad >= self.in_rows {
                        continue;
                    }
                    let dst = dx.row_mut(ti - self.pad);
                    for (acc, &gg) in dst.iter_mut().zip(&row[kk * self.in_ch..(kk + 1) * self.in_ch]) {
                        *acc += gg;
                    }
                }
            }
            dx
        });
        vec![dx, dw, db]
    }
}

struct BatchNormTrainOp {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}
impl Backward for BatchNormTrainOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let (t, c) = (g.rows(), g.cols());
        let tn = t as f64;
        let gamma = p[1];
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for r in 0..t {
            for j in 0..c {
                sum_g[j] += g.at(r, j);
                sum_gx[j] += g.at(r, j) * self.x_hat.at(r, j);
            }
        }
        let dgamma = need[1].then(|| Tensor::from_vec(p[1].shape(), sum_gx.clone()));
        let dbeta = need[2].then(|| Tensor::from_vec(p[2].shape(), sum_g.clone()));
        let dx = need[0].then(|| {
            let mut d = Tensor::zeros(p[0].shape());
            for r in 0..t {
                for j in 0..c {
                    let term = g.at(r, j) - sum_g[j] / tn - self.x_hat.at(r, j) * sum_gx[j] / tn;
                    d.set(r, j, gamma.data()[j] * self.inv_std[j] * term);
                }
            }
            d
        });
        vec![dx, dgamma, dbeta]
    }
}

struct BatchNormEvalOp {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}
impl Backward for BatchNormEvalOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let (t, c) = (g.rows(), g.cols());
        let gamma = p[1];
        let dx = need[0].then(|| {
            let mut d = Tensor::zeros(p[0].shape());
            for r in 0..t {
                for j in 0..c {
                    d.set(r, j, g.at(r, j) * gamma.data()[j] * self.inv_std[j]);
                }
            }
            d
        });
        let dgamma = need[1].then(|| {
            let mut sum = vec![0.0; c];
            for r in 0..t {
                for j in 0..c {
                    sum[j] += g.at(r, j) * self.x_hat.at(r, j);
                }
            }
            Tensor::from_vec(p[1].shape(), sum)
        });
        let dbeta = need[2].then(|| {
            let mut sum = vec![0.0; c];
            for r in 0..t {
                for j in 0..c {
                    sum[j] += g.at(r, j);
                }
            }
            Tensor::from_vec(p[2].shape(), sum)
        });
        vec![dx, dgamma, dbeta]
    }
}

struct LstmOp {
    gates: Tensor,  // T×4H, activated [i f g o]
    cells: Tensor,  // T×H
    tanh_c: Tensor, // T×H
    hidden_dim: usize,
}
impl Backward for LstmOp {
    fn backward(&self, o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        let h = self.hidden_dim;
        let (xv, wv, uv) = (p[0], p[1], p[2]);
        let t = xv.rows();
        let in_dim = xv.cols();
        let mut dx = Tensor::zeros(&[t, in_dim]);
        let mut dw = Tensor::zeros(&[in_dim, 4 * h]);
        let mut du = Tensor::zeros(&[h, 4 * h]);
        let mut db = Tensor::zeros(&[4 * h]);
        let mut dh_rec = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dpre = vec![0.0; 4 * h];
        for step in (0..t).rev() {
            for j in 0..h {
                let dh = g.at(step, j) + dh_rec[j];
                let i_g = self.gates.at(step, j);
                let f_g = self.gates.at(step, h + j);
                let g_g = self.gates.at(step, 2 * h + j);
                let o_g = self.gates.at(step, 3 * h + j);
                let tc = self.tanh_c.at(step, j);
                let c_prev = if step == 0 { 0.0 } else { self.cells.at(step - 1, j) };
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f_g;
                dpre[j] = d_i * i_g * (1.0 - i_g);
                dpre[h + j] = d_f * f_g * (1.0 - f_g);
                dpre[2 * h + j] = d_g * (1.0 - g_g * g_g);
                dpre[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            for (acc, &d) in db.data_mut().iter_mut().zip(&dpre) {
                *acc += d;
            }
            // dW += x_tᵀ dpre ; dX[t] = dpre @ Wᵀ
            let xr = xv.row(step);
            for ii in 0..in_dim {
                let xi = xr[ii];
                let wrow = &wv.data()[ii * 4 * h..(ii + 1) * 4 * h];
                let dwrow = &mut dw.data_mut()[ii * 4 * h..(ii + 1) * 4 * h];
                let mut acc = 0.0;
                for j in 0..4 * h {
                    dwrow[j] += xi * dpre[j];
                    acc += dpre[j] * wrow[j];
                }
                dx.set(step, ii, acc);
            }
            // dU += h_{t-1}ᵀ dpre ; dh_rec = dpre @ Uᵀ
            if step > 0 {
                let hprev = o.row(step - 1);
                for hh in 0..h {
                    let hv = hprev[hh];
                    let urow = &uv.data()[hh * 4 * h..(hh + 1) * 4 * h];
                    let durow = &mut du.data_mut()[hh * 4 * h..(hh + 1) * 4 * h];
                    let mut acc = 0.0;
                    for j in 0..4 * h {
                        durow[j] += hv * dpre[j];
                        acc += dpre[j] * urow[j];
                    }
                    dh_rec[hh] = acc;
                }
            } else {
                dh_rec.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        vec![
            need[0].then_some(dx),
            need[1].then_some(dw),
            need[2].then_some(du),
            need[3].then_some(db),
        ]
    }
}

struct SoftmaxCeOp {
    probs: Tensor,
    labels: Vec<usize>,
}
impl Backward for SoftmaxCeOp {
    fn backward(&self, _o: &Tensor, g: &Tensor, p: &[&Tensor], need: &[bool]) -> Vec<Option<Tensor>> {
        vec![need[0].then(|| {
            let (n, c) = (p[0].rows(), p[0].cols());
            let scale = g.item() / n as f64;
            let mut d = Tensor::zeros(&[n, c]);
            for i in 0..n {
                for j in 0..c {
                    let delta = if j == self.labels[i] { 1.0 } else { 0.0 };
                    d.set(i, j, (self.probs.at(i, j) - delta) * scale);
                }
            }
            d
        })]
    }
}

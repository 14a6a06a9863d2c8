//! Content encoder: speaker-conditioned convolutional trunk, two BLSTM
//! layers, self-attention enhancement, then non-overlapping temporal max
//! pooling down to the bottleneck rate.

use crate::audio::{MelSpectrogram, NUM_MELS};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{AttentionMode, Tape, Var};
use crate::nn::{BatchNorm1d, BindMode, Blstm, Conv1d, Ctx, Phase, Tensor};
use crate::rng::Rng;
use crate::speaker::SpeakerEmbedding;

/// Pooled sequence of bottleneck codes, `floor(T/f) × 2·d_c`.
#[derive(Clone, Debug)]
pub struct ContentEmbedding {
    codes: Tensor,
    pool_factor: usize,
}

impl ContentEmbedding {
    pub fn new(codes: Tensor, pool_factor: usize) -> Result<Self> {
        if codes.rank() != 2 || codes.rows() == 0 {
            return Err(Error::invalid("content embedding must have at least one code"));
        }
        if pool_factor == 0 {
            return Err(Error::invalid("pool factor must be positive"));
        }
        if !codes.all_finite() {
            return Err(Error::NonFinite("content embedding".into()));
        }
        Ok(ContentEmbedding { codes, pool_factor })
    }

    pub fn codes(&self) -> &Tensor {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.codes.cols()
    }

    pub fn pool_factor(&self) -> usize {
        self.pool_factor
    }

    /// Time-averaged code vector (probe-classifier input).
    pub fn mean_pooled(&self) -> Vec<f64> {
        let (l, d) = (self.codes.rows(), self.codes.cols());
        let mut out = vec![0.0; d];
        for r in 0..l {
            for (o, &v) in out.iter_mut().zip(self.codes.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= l as f64;
        }
        out
    }
}

/// Repeat each code `pool_factor` times along time, truncated or edge-padded
/// to exactly `t` frames. Requires `t ≤ f·len + f - 1`.
pub fn upsample_content(c: &ContentEmbedding, t: usize) -> Result<Tensor> {
    if c.is_empty() {
        return Err(Error::invalid("cannot upsample empty content"));
    }
    if t == 0 {
        return Err(Error::invalid("upsample target length must be positive"));
    }
    let f = c.pool_factor();
    let bound = f * c.len() + f - 1;
    if t > bound {
        return Err(Error::invalid(format!(
            "target length {t} exceeds {bound} reachable from {} codes at factor {f}",
            c.len()
        )));
    }
    let d = c.width();
    let mut out = Tensor::zeros(&[t, d]);
    for r in 0..t {
        let src = (r / f).min(c.len() - 1);
        out.row_mut(r).copy_from_slice(c.codes().row(src));
    }
    Ok(out)
}

#[derive(Clone)]
pub struct ContentEncoder {
    convs: Vec<Conv1d>,
    bns: Vec<BatchNorm1d>,
    blstms: Vec<Blstm>,
    pub pool_factor: usize,
    pub bottleneck: usize,
    pub attention_residual: bool,
}

impl ContentEncoder {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, cfg: &ModelConfig) -> Self {
        let ch = cfg.enc_conv_channels;
        let in_dim = NUM_MELS + cfg.d_spk;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        for i in 0..3 {
            let input = if i == 0 { in_dim } else { ch };
            convs.push(Conv1d::init(store, rng, &format!("enc.conv{i}"), input, ch, 5));
            bns.push(BatchNorm1d::init_instance(store, &format!("enc.bn{i}"), ch));
        }
        let d_c = cfg.enc_bottleneck;
        let blstms = vec![
            Blstm::init(store, rng, "enc.blstm0", ch, d_c),
            Blstm::init(store, rng, "enc.blstm1", 2 * d_c, d_c),
        ];
        ContentEncoder {
            convs,
            bns,
            blstms,
            pool_factor: cfg.pool_factor,
            bottleneck: d_c,
            attention_residual: cfg.attention_residual,
        }
    }

    /// In-graph forward: mel (`T×80`) plus a `1×d_spk` conditioning row to
    /// `floor(T/f) × 2·d_c` codes.
    pub fn forward(&self, cx: &mut Ctx, mel: Var, spk: Var, attention: AttentionMode) -> Var {
        let (h, _) = self.forward_parts(cx, mel, spk, attention);
        h
    }

    /// Returns `(pooled codes, pre-pool sequence)`; the pre-pool sequence is
    /// the attention output feeding the pooling stage.
    fn forward_parts(&self, cx: &mut Ctx, mel: Var, spk: Var, attention: AttentionMode) -> (Var, Var) {
        let t = cx.tape.value(mel).rows();
        debug_assert!(t >= self.pool_factor, "caller must reject short inputs");
        let mel = cx.tape.affine(
            mel,
            crate::model::MEL_IN_SCALE,
            crate::model::MEL_IN_SHIFT,
        );
        let cond = cx.tape.broadcast_row(spk, t);
        let mut h = cx.tape.concat_cols(mel, cond);
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = conv.forward(cx, h);
            h = bn.forward(cx, h);
            h = cx.tape.relu(h);
        }
        for blstm in &self.blstms {
            h = blstm.forward(cx, h);
        }
        let attended = cx.tape.attention(h, h, h, attention);
        let enhanced = if self.attention_residual {
            cx.tape.add(attended, h)
        } else {
            attended
        };
        let pooled = cx
            .tape
            .max_pool_time(enhanced, self.pool_factor, self.pool_factor);
        (pooled, enhanced)
    }

    /// Frozen-parameter extraction for inference and evaluation.
    pub fn encode(
        &self,
        store: &ParamStore,
        mel: &MelSpectrogram,
        spk: &SpeakerEmbedding,
    ) -> Result<ContentEmbedding> {
        if mel.num_frames() < self.pool_factor {
            return Err(Error::UtteranceTooShort {
                frames: mel.num_frames(),
                needed: self.pool_factor,
            });
        }
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, BindMode::Frozen, Phase::Eval);
        let x = cx.constant(mel.to_tensor());
        let s = cx.constant(spk.to_row());
        let codes = self.forward(&mut cx, x, s, AttentionMode::Normal);
        ContentEmbedding::new(tape.value(codes).clone(), self.pool_factor)
    }
}

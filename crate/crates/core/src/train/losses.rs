//! Graph builders for the two training objectives.
//!
//! Self-reconstruction: decode the utterance's own content under its own
//! speaker identity, penalize the spectral error plus the drift of content
//! codes re-extracted from the reconstruction.
//!
//! Speaker consistency: decode the content under a *different* speaker's
//! identity, then require the converted output to keep the source content
//! codes and to carry the borrowed identity. The content encoder's
//! parameters receive no gradient from this loss (its applications run with
//! frozen bindings; gradients still flow through to the decoder), and the
//! speaker encoder is frozen everywhere.

use crate::model::VoiceModel;
use crate::nn::tape::{AttentionMode, Tape, Var};
use crate::nn::{BindMode, Ctx, Phase, Tensor};
use crate::speaker::SpeakerEmbedding;

/// Queued batch-norm running-statistic updates from a forward pass.
pub type BufferUpdates = Vec<(usize, Vec<f64>)>;

/// Build the self-reconstruction loss
/// `mean²(X̂ − X) + mean|Ĉ − C|` (optionally plus the pre-postnet term).
pub fn build_srl_loss(
    tape: &mut Tape,
    model: &VoiceModel,
    x_i: &Tensor,
    s_a: &SpeakerEmbedding,
    include_prenet: bool,
) -> (Var, BufferUpdates) {
    let t = x_i.rows();
    let mut cx = Ctx::new(tape, &model.store, BindMode::Trainable, Phase::Train);
    let x = cx.constant(x_i.clone());
    let s = cx.constant(s_a.to_row());
    let c = model.content.forward(&mut cx, x, s, AttentionMode::Normal);
    let (pre, post) = model.decoder.forward(&mut cx, c, s, t);
    let c_hat = model.content.forward(&mut cx, post, s, AttentionMode::Normal);

    let spectral = {
        let d = cx.tape.sub(post, x);
        let sq = cx.tape.square(d);
        cx.tape.mean_all(sq)
    };
    let content_drift = {
        let d = cx.tape.sub(c_hat, c);
        let a = cx.tape.abs_op(d);
        cx.tape.mean_all(a)
    };
    let mut loss = cx.tape.add(spectral, content_drift);
    if include_prenet {
        let d = cx.tape.sub(pre, x);
        let sq = cx.tape.square(d);
        let pre_term = cx.tape.mean_all(sq);
        loss = cx.tape.add(loss, pre_term);
    }
    let updates = cx.take_buffer_updates();
    (loss, updates)
}

/// Build the speaker consistency loss `mean|Ĉ − C| + mean|Ŝ_B − S_B|` on the
/// conversion path `decode(C(x_iA), S_B)`.
pub fn build_scl_loss(
    tape: &mut Tape,
    model: &VoiceModel,
    x_i: &Tensor,
    s_a: &SpeakerEmbedding,
    s_b: &SpeakerEmbedding,
    freeze_content: bool,
) -> (Var, BufferUpdates) {
    let t = x_i.rows();
    let mut cx = Ctx::new(tape, &model.store, BindMode::Frozen, Phase::Train);
    // Content of the source utterance: a constant target for this loss.
    let x = cx.constant(x_i.clone());
    let sa = cx.constant(s_a.to_row());
    let c_i = model.content.forward(&mut cx, x, sa, AttentionMode::Normal);

    cx.mode = BindMode::Trainable;
    let sb = cx.constant(s_b.to_row());
    let (_, converted) = model.decoder.forward(&mut cx, c_i, sb, t);

    // Re-extractions: parameters frozen, gradients flow into `converted`.
    cx.mode = if freeze_content {
        BindMode::Frozen
    } else {
        BindMode::Trainable
    };
    let c_hat = model.content.forward(&mut cx, converted, sa, AttentionMode::Normal);
    cx.mode = BindMode::Frozen;
    let s_hat = model.speaker.forward(&mut cx, converted);

    let content_term = {
        let d = cx.tape.sub(c_hat, c_i);
        let a = cx.tape.abs_op(d);
        cx.tape.mean_all(a)
    };
    let identity_term = {
        let d = cx.tape.sub(s_hat, sb);
        let a = cx.tape.abs_op(d);
        cx.tape.mean_all(a)
    };
    let loss = cx.tape.add(content_term, identity_term);
    let updates = cx.take_buffer_updates();
    (loss, updates)
}

/// Mean of scalar vars on the tape.
pub(crate) fn mean_vars(tape: &mut Tape, vars: &[Var]) -> Var {
    assert!(!vars.is_empty());
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    if vars.len() > 1 {
        tape.scale(acc, 1.0 / vars.len() as f64)
    } else {
        acc
    }
}

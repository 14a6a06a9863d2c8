//! Spectrogram decoder: upsampled content codes plus the target speaker
//! embedding through a conv trunk, three LSTM layers, a linear projection to
//! 80 mel bands, and a residual postnet.

use crate::audio::{MelSpectrogram, NUM_MELS};
use crate::config::ModelConfig;
use crate::content::ContentEmbedding;
use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::{BatchNorm1d, BindMode, Conv1d, Ctx, Linear, Lstm, Phase};
use crate::rng::Rng;
use crate::speaker::SpeakerEmbedding;

/// Decoder outputs before and after the residual postnet, both `T×80`.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub pre_mel: MelSpectrogram,
    pub post_mel: MelSpectrogram,
}

#[derive(Clone)]
pub struct Decoder {
    convs: Vec<Conv1d>,
    bns: Vec<BatchNorm1d>,
    lstms: Vec<Lstm>,
    proj: Linear,
    post_convs: Vec<Conv1d>,
    post_bns: Vec<BatchNorm1d>,
    pub pool_factor: usize,
}

impl Decoder {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, cfg: &ModelConfig) -> Self {
        let ch = cfg.dec_conv_channels;
        let in_dim = cfg.content_width() + cfg.d_spk;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        for i in 0..3 {
            let input = if i == 0 { in_dim } else { ch };
            convs.push(Conv1d::init(store, rng, &format!("dec.conv{i}"), input, ch, 5));
            bns.push(BatchNorm1d::init_instance(store, &format!("dec.bn{i}"), ch));
        }
        let h = cfg.dec_lstm_hidden;
        let mut lstms = Vec::new();
        for i in 0..3 {
            let input = if i == 0 { ch } else { h };
            lstms.push(Lstm::init(store, rng, &format!("dec.lstm{i}"), input, h));
        }
        let proj = Linear::init(store, rng, "dec.proj", h, NUM_MELS);
        let pch = cfg.postnet_channels;
        let mut post_convs = Vec::new();
        let mut post_bns = Vec::new();
        for i in 0..5 {
            let input = if i == 0 { NUM_MELS } else { pch };
            let output = if i == 4 { NUM_MELS } else { pch };
            post_convs.push(Conv1d::init(store, rng, &format!("dec.post{i}"), input, output, 5));
            post_bns.push(BatchNorm1d::init_instance(store, &format!("dec.postbn{i}"), output));
        }
        Decoder {
            convs,
            bns,
            lstms,
            proj,
            post_convs,
            post_bns,
            pool_factor: cfg.pool_factor,
        }
    }

    /// In-graph forward: content codes (`L×2d_c`) and a `1×d_spk` identity
    /// row to `(pre_mel, post_mel)` of `t_out×80`.
    pub fn forward(&self, cx: &mut Ctx, content: Var, spk: Var, t_out: usize) -> (Var, Var) {
        let up = cx.tape.upsample_repeat(content, self.pool_factor, t_out);
        let cond = cx.tape.broadcast_row(spk, t_out);
        let mut h = cx.tape.concat_cols(up, cond);
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = conv.forward(cx, h);
            h = bn.forward(cx, h);
            h = cx.tape.relu(h);
        }
        for lstm in &self.lstms {
            h = lstm.forward(cx, h);
        }
        let projected = self.proj.forward(cx, h);
        let pre = cx.tape.scale(projected, crate::model::MEL_OUT_SCALE);
        // Residual postnet: four tanh conv blocks plus a linear conv block.
        let mut r = pre;
        for (i, (conv, bn)) in self.post_convs.iter().zip(&self.post_bns).enumerate() {
            r = conv.forward(cx, r);
            r = bn.forward(cx, r);
            if i < 4 {
                r = cx.tape.tanh_op(r);
            }
        }
        let post = cx.tape.add(pre, r);
        (pre, post)
    }

    /// Frozen-parameter decode.
    pub fn decode(
        &self,
        store: &ParamStore,
        content: &ContentEmbedding,
        spk: &SpeakerEmbedding,
        t_out: usize,
    ) -> Result<DecoderOutput> {
        if t_out == 0 {
            return Err(Error::invalid("decode target length must be at least 1"));
        }
        let bound = self.pool_factor * content.len() + self.pool_factor - 1;
        if t_out > bound {
            return Err(Error::invalid(format!(
                "decode target length {t_out} exceeds {bound} reachable from {} codes",
                content.len()
            )));
        }
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, BindMode::Frozen, Phase::Eval);
        let c = cx.constant(content.codes().clone());
        let s = cx.constant(spk.to_row());
        let (pre, post) = self.forward(&mut cx, c, s, t_out);
        Ok(DecoderOutput {
            pre_mel: MelSpectrogram::new(tape.value(pre).clone())?,
            post_mel: MelSpectrogram::new(tape.value(post).clone())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::seeded;

    fn setup(cfg: &ModelConfig) -> (ParamStore, Decoder) {
        let mut store = ParamStore::new();
        let mut rng = seeded(23);
        let dec = Decoder::init(&mut store, &mut rng, cfg);
        (store, dec)
    }

    fn unit_emb(d: usize, seed: u64) -> SpeakerEmbedding {
        let mut rng = seeded(seed);
        let v: Vec<f64> = (0..d).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        SpeakerEmbedding::new(v.into_iter().map(|x| x / n).collect()).unwrap()
    }

    fn random_codes(l: usize, w: usize, f: usize, seed: u64) -> ContentEmbedding {
        let mut rng = seeded(seed);
        let data = (0..l * w).map(|_| crate::rng::uniform(&mut rng, -1.0, 1.0)).collect();
        ContentEmbedding::new(Tensor::from_vec(&[l, w], data), f).unwrap()
    }

    #[test]
    fn zeroed_network_produces_zero_pre_mel() {
        let cfg = ModelConfig::desk();
        let (mut store, dec) = setup(&cfg);
        for idx in store.group_indices("dec.") {
            let name = store.entry(idx).name.clone();
            if !name.contains("running") && !name.contains("gamma") {
                store.entry_mut(idx).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let codes = random_codes(4, cfg.content_width(), cfg.pool_factor, 3);
        let out = dec.decode(&store, &codes, &unit_emb(cfg.d_spk, 4), 32).unwrap();
        assert!(out.pre_mel.frames().data().iter().all(|&v| v == 0.0));
        assert!(out.post_mel.frames().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shapes_match_target_length() {
        let cfg = ModelConfig::desk();
        let (store, dec) = setup(&cfg);
        let spk = unit_emb(cfg.d_spk, 5);
        for t in [32usize, 100, 257] {
            let l = t.div_ceil(cfg.pool_factor);
            let codes = random_codes(l, cfg.content_width(), cfg.pool_factor, t as u64);
            let out = dec.decode(&store, &codes, &spk, t).unwrap();
            assert_eq!(out.pre_mel.frames().shape(), &[t, NUM_MELS]);
            assert_eq!(out.post_mel.frames().shape(), &[t, NUM_MELS]);
        }
    }

    #[test]
    fn zero_target_length_rejected() {
        let cfg = ModelConfig::desk();
        let (store, dec) = setup(&cfg);
        let codes = random_codes(2, cfg.content_width(), cfg.pool_factor, 6);
        assert!(dec.decode(&store, &codes, &unit_emb(cfg.d_spk, 7), 0).is_err());
    }

    #[test]
    fn decode_is_deterministic_and_does_not_mutate_parameters() {
        let cfg = ModelConfig::desk();
        let (store, dec) = setup(&cfg);
        let before = store.group_bits("");
        let codes = random_codes(3, cfg.content_width(), cfg.pool_factor, 8);
        let spk = unit_emb(cfg.d_spk, 9);
        let a = dec.decode(&store, &codes, &spk, 24).unwrap();
        let b = dec.decode(&store, &codes, &spk, 24).unwrap();
        assert!(a.post_mel.frames().bits_eq(b.post_mel.frames()));
        assert_eq!(before, store.group_bits(""));
    }

    #[test]
    fn speaker_embedding_reaches_the_output() {
        // Gradient of ‖post‖² w.r.t. the identity row is nonzero.
        let cfg = ModelConfig::desk();
        let (store, dec) = setup(&cfg);
        let codes = random_codes(3, cfg.content_width(), cfg.pool_factor, 10);
        let spk = unit_emb(cfg.d_spk, 11);
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &store, BindMode::Frozen, Phase::Train);
        let c = cx.constant(codes.codes().clone());
        let s = cx.tape.leaf(spk.to_row(), true);
        let (_, post) = dec.forward(&mut cx, c, s, 24);
        let sq = tape.square(post);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss);
        let gs = grads.get(s).expect("no gradient reached the speaker row");
        assert!(gs.data().iter().any(|&g| g != 0.0));
    }
}

//! Speaker identity encoder: two stacked LSTM layers over mel frames, final
//! hidden state projected and L2-normalized. Pretrained with a generalized
//! end-to-end verification loss and frozen for all conversion training.

use crate::audio::MelSpectrogram;
use crate::config::{ModelConfig, SpeakerPretrainConfig};
use crate::data::{Corpus, MelSet};
use crate::error::{Error, Result};
use crate::nn::numeric::det_sum;
use crate::nn::params::{ParamKind, ParamStore};
use crate::nn::tape::{Backward, Tape, Var};
use crate::nn::{Adam, AdamConfig, BindMode, Ctx, Linear, Lstm, Phase, Tensor};
use crate::rng::{derived, uniform_range, uniform_usize, Rng};

/// Unit-norm identity vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if vector.is_empty() {
            return Err(Error::invalid("speaker embedding is empty"));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("speaker embedding".into()));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::invalid(format!(
                "speaker embedding norm {norm} is not 1 ± 1e-5"
            )));
        }
        Ok(SpeakerEmbedding { vector })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        cosine(&self.vector, &other.vector)
    }

    pub fn to_row(&self) -> Tensor {
        Tensor::from_vec(&[1, self.vector.len()], self.vector.clone())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

#[derive(Clone)]
pub struct SpeakerEncoder {
    lstm0: Lstm,
    lstm1: Lstm,
    proj: Linear,
    pub d_spk: usize,
}

impl SpeakerEncoder {
    pub fn init(store: &mut ParamStore, rng: &mut Rng, cfg: &ModelConfig) -> Self {
        let lstm0 = Lstm::init(store, rng, "spk.lstm0", crate::audio::NUM_MELS, cfg.spk_hidden);
        let lstm1 = Lstm::init(store, rng, "spk.lstm1", cfg.spk_hidden, cfg.spk_hidden);
        let proj = Linear::init(store, rng, "spk.proj", cfg.spk_hidden, cfg.d_spk);
        SpeakerEncoder {
            lstm0,
            lstm1,
            proj,
            d_spk: cfg.d_spk,
        }
    }

    /// In-graph forward: mel frames (`T×80`) to a unit-norm `1×d_spk` row.
    pub fn forward(&self, cx: &mut Ctx, mel: Var) -> Var {
        let mel = cx.tape.affine(
            mel,
            crate::model::MEL_IN_SCALE,
            crate::model::MEL_IN_SHIFT,
        );
        let h0 = self.lstm0.forward(cx, mel);
        let h1 = self.lstm1.forward(cx, h0);
        let t = cx.tape.value(h1).rows();
        let last = cx.tape.row(h1, t - 1);
        let p = self.proj.forward(cx, last);
        cx.tape.l2_normalize_row(p)
    }

    /// Whole-utterance embedding with frozen parameters.
    pub fn embed_utterance(&self, store: &ParamStore, mel: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, BindMode::Frozen, Phase::Eval);
        let x = cx.constant(mel.to_tensor());
        let e = self.forward(&mut cx, x);
        SpeakerEmbedding::new(tape.value(e).data().to_vec())
    }
}

/// Learned similarity scale/offset of the verification loss:
/// `sim = w · cos + b` with `w` kept positive.
#[derive(Clone)]
pub struct Ge2eHead {
    w: usize,
    b: usize,
}

impl Ge2eHead {
    pub fn init(store: &mut ParamStore) -> Self {
        let w = store.register("ge2e.w", Tensor::from_vec(&[1], vec![10.0]), ParamKind::Weight);
        let b = store.register("ge2e.b", Tensor::from_vec(&[1], vec![-5.0]), ParamKind::Weight);
        Ge2eHead { w, b }
    }

    /// Clamp the similarity scale strictly positive (applied after each
    /// optimizer step).
    pub fn clamp_scale(&self, store: &mut ParamStore) {
        let w = &mut store.entry_mut(self.w).value.data_mut()[0];
        if *w < 1e-4 {
            *w = 1e-4;
        }
    }

    /// Verification loss over `n_speakers × m_utts` stacked embeddings
    /// (speaker-major rows).
    pub fn loss(&self, cx: &mut Ctx, embeddings: Var, n_speakers: usize, m_utts: usize) -> Var {
        let w = cx.bind(self.w);
        let b = cx.bind(self.b);
        let ev = cx.tape.value(embeddings);
        assert_eq!(ev.rows(), n_speakers * m_utts, "ge2e embedding count");
        let wv = cx.tape.value(w).item();
        let bv = cx.tape.value(b).item();
        let loss = ge2e_forward(ev, n_speakers, m_utts, wv, bv);
        cx.tape.push_op(
            Tensor::scalar(loss),
            &[embeddings, w, b],
            Box::new(Ge2eOp {
                n: n_speakers,
                m: m_utts,
            }),
        )
    }
}

/// Generalized end-to-end softmax loss.
///
/// Each utterance is scored against every speaker centroid (leave-one-out for
/// its own speaker) with `w·cos + b`, then pays softmax cross-entropy against
/// its own speaker. The result is the sum over all `N·M` utterances.
///
/// Order-independent reductions keep the value bit-identical under
/// permutations of speakers and of utterances within a speaker.
pub fn ge2e_loss(embeddings: &Tensor, n_speakers: usize, m_utts: usize, w: f64, b: f64) -> Result<f64> {
    if n_speakers < 2 || m_utts < 2 {
        return Err(Error::invalid(format!(
            "ge2e needs N >= 2 speakers and M >= 2 utterances, got {n_speakers}×{m_utts}"
        )));
    }
    if embeddings.rank() != 2 || embeddings.rows() != n_speakers * m_utts {
        return Err(Error::shape(format!(
            "ge2e expects {}×d embeddings, got {:?}",
            n_speakers * m_utts,
            embeddings.shape()
        )));
    }
    if !embeddings.all_finite() {
        return Err(Error::NonFinite("ge2e embeddings".into()));
    }
    for u in 0..embeddings.rows() {
        let norm = embeddings.row(u).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::invalid(format!(
                "ge2e embedding {u} has norm {norm}, expected unit length"
            )));
        }
    }
    Ok(ge2e_forward(embeddings, n_speakers, m_utts, w, b))
}

fn ge2e_forward(x: &Tensor, n: usize, m: usize, w: f64, b: f64) -> f64 {
    let sims = ge2e_similarities(x, n, m, w, b);
    let mut ces = Vec::with_capacity(n * m);
    let mut terms = vec![0.0; n];
    for u in 0..n * m {
        let own = u / m;
        let row = sims.row(u);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (t, &s) in terms.iter_mut().zip(row) {
            *t = (s - mx).exp();
        }
        let denom = det_sum(&terms);
        ces.push(mx + denom.ln() - row[own]);
    }
    det_sum(&ces)
}

/// `(N·M)×N` similarity matrix: utterance u against speaker k, using the
/// leave-one-out centroid when k is u's own speaker.
fn ge2e_similarities(x: &Tensor, n: usize, m: usize, w: f64, b: f64) -> Tensor {
    let d = x.cols();
    // Per-speaker sums (order-independent across utterances).
    let mut sums = Tensor::zeros(&[n, d]);
    let mut terms = vec![0.0; m];
    for j in 0..n {
        for dim in 0..d {
            for i in 0..m {
                terms[i] = x.at(j * m + i, dim);
            }
            sums.set(j, dim, det_sum(&terms));
        }
    }
    let mut sims = Tensor::zeros(&[n * m, n]);
    let mut centroid = vec![0.0; d];
    for u in 0..n * m {
        let own = u / m;
        let xu = x.row(u);
        for k in 0..n {
            if k == own {
                for (c, (s, xv)) in centroid.iter_mut().zip(sums.row(k).iter().zip(xu)) {
                    *c = (s - xv) / (m as f64 - 1.0);
                }
            } else {
                for (c, s) in centroid.iter_mut().zip(sums.row(k)) {
                    *c = s / m as f64;
                }
            }
            sims.set(u, k, w * cosine(xu, &centroid) + b);
        }
    }
    sims
}

struct Ge2eOp {
    n: usize,
    m: usize,
}

impl Backward for Ge2eOp {
    fn backward(
        &self,
        _out: &Tensor,
        out_grad: &Tensor,
        parents: &[&Tensor],
        need: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (x, wt, bt) = (parents[0], parents[1], parents[2]);
        let (n, m) = (self.n, self.m);
        let d = x.cols();
        let w = wt.item();
        let gout = out_grad.item();
        let sims = ge2e_similarities(x, n, m, w, bt.item());

        // softmax gradient per utterance row
        let mut gsim = Tensor::zeros(&[n * m, n]);
        for u in 0..n * m {
            let own = u / m;
            let row = sims.row(u);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&s| (s - mx).exp()).sum();
            for k in 0..n {
                let p = (row[k] - mx).exp() / denom;
                let delta = if k == own { 1.0 } else { 0.0 };
                gsim.set(u, k, (p - delta) * gout);
            }
        }

        // Recompute centroid pieces for the chain rule through cosines.
        let mut sums = Tensor::zeros(&[n, d]);
        for j in 0..n {
            for i in 0..m {
                for dim in 0..d {
                    let v = sums.at(j, dim) + x.at(j * m + i, dim);
                    sums.set(j, dim, v);
                }
            }
        }

        let mut dx = Tensor::zeros(&[n * m, d]);
        let mut dw = 0.0;
        let mut db = 0.0;
        let mut centroid = vec![0.0; d];
        for u in 0..n * m {
            let own = u / m;
            let xu: Vec<f64> = x.row(u).to_vec();
            let na = xu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for k in 0..n {
                let members = if k == own { m - 1 } else { m };
                if k == own {
                    for (c, (s, xv)) in centroid.iter_mut().zip(sums.row(k).iter().zip(&xu)) {
                        *c = (s - xv) / members as f64;
                    }
                } else {
                    for (c, s) in centroid.iter_mut().zip(sums.row(k)) {
                        *c = s / members as f64;
                    }
                }
                let nc = centroid.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let dot: f64 = xu.iter().zip(&centroid).map(|(a, c)| a * c).sum();
                let cosv = dot / (na * nc);
                let g = gsim.at(u, k);
                dw += g * cosv;
                db += g;
                if g == 0.0 {
                    continue;
                }
                let coeff = g * w;
                // d cos / d x_u and d cos / d centroid
                for dim in 0..d {
                    let da = centroid[dim] / (na * nc) - cosv * xu[dim] / (na * na);
                    dx.row_mut(u)[dim] += coeff * da;
                }
                let spread = coeff / members as f64;
                for dim in 0..d {
                    let dc = xu[dim] / (na * nc) - cosv * centroid[dim] / (nc * nc);
                    let contribution = spread * dc;
                    for i in 0..m {
                        let v = k * m + i;
                        if k == own && v == u {
                            continue;
                        }
                        dx.row_mut(v)[dim] += contribution;
                    }
                }
            }
        }
        vec![
            need[0].then_some(dx),
            need[1].then(|| Tensor::from_vec(&[1], vec![dw])),
            need[2].then(|| Tensor::from_vec(&[1], vec![db])),
        ]
    }
}

/// Per-step loss trace of speaker-encoder pretraining.
pub struct PretrainLog {
    pub losses: Vec<f64>,
}

/// Pretrain the speaker encoder (and similarity head) with verification
/// batches sampled from the corpus train split. All other parameter groups
/// are untouched; afterwards the speaker group is frozen by the conversion
/// trainer.
pub fn pretrain_speaker_encoder(
    model: &mut crate::model::VoiceModel,
    corpus: &Corpus,
    mels: &MelSet,
    cfg: &SpeakerPretrainConfig,
) -> Result<PretrainLog> {
    cfg.validate()?;
    let n = cfg.speakers_per_batch;
    let m = cfg.utts_per_speaker;
    let eligible: Vec<usize> = (0..corpus.speakers.len())
        .filter(|&s| corpus.speakers[s].seen && corpus.train_utterances_of(s).len() >= m)
        .collect();
    if eligible.len() < n {
        return Err(Error::invalid(format!(
            "pretraining needs {n} speakers with {m}+ train utterances, found {}",
            eligible.len()
        )));
    }

    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        &["enc.", "dec."],
    );
    let mut rng = derived(cfg.seed, &[0x5e2e]);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        // N distinct speakers, M distinct utterances each.
        let mut pool = eligible.clone();
        let mut batch: Vec<(usize, usize)> = Vec::with_capacity(n * m);
        for _ in 0..n {
            let pick = uniform_usize(&mut rng, pool.len());
            let spk = pool.swap_remove(pick);
            let utts = corpus.train_utterances_of(spk);
            let mut upool: Vec<usize> = utts.to_vec();
            for _ in 0..m {
                let upick = uniform_usize(&mut rng, upool.len());
                batch.push((spk, upool.swap_remove(upick)));
            }
        }

        model.store.zero_grads();
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, &model.store, BindMode::Trainable, Phase::Train);
        let mut rows = Vec::with_capacity(n * m);
        for &(spk, utt) in &batch {
            let mel = mels.get(spk, utt);
            let cropped = crop_frames(mel.to_tensor(), cfg.crop_frames, &mut rng);
            let x = cx.constant(cropped);
            rows.push(model.speaker.forward(&mut cx, x));
        }
        let stacked = cx.tape.stack_rows(&rows);
        let loss = model.ge2e.loss(&mut cx, stacked, n, m);
        drop(cx);
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss);
        tape.accumulate_param_grads(&mut model.store, &grads);
        adam.step(&mut model.store);
        model.ge2e.clamp_scale(&mut model.store);
    }
    Ok(PretrainLog { losses })
}

/// Random contiguous crop to at most `target` rows.
pub(crate) fn crop_frames(frames: Tensor, target: usize, rng: &mut Rng) -> Tensor {
    let t = frames.rows();
    if t <= target {
        return frames;
    }
    let start = uniform_range(rng, 0, t - target + 1);
    let mut out = Tensor::zeros(&[target, frames.cols()]);
    for r in 0..target {
        out.row_mut(r).copy_from_slice(frames.row(start + r));
    }
    out
}

//! The full conversion model: shared parameter store plus the three network
//! components and conversion itself.

use std::path::Path;

use crate::audio::MelSpectrogram;
use crate::config::ModelConfig;
use crate::content::{ContentEmbedding, ContentEncoder};
use crate::decoder::{Decoder, DecoderOutput};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::rng::derived;
use crate::speaker::{Ge2eHead, SpeakerEmbedding, SpeakerEncoder};
use crate::train::checkpoint::{self, LoadReport};

/// Fixed affine conditioning of log-mel inputs inside the networks:
/// `x_norm = MEL_IN_SCALE * x + MEL_IN_SHIFT` maps the working range of
/// log-mel values (about [-11.5, 2]) to roughly [-0.9, 2.5]. The decoder
/// emits in the same normalized space and is scaled back by
/// `MEL_OUT_SCALE` (scale only, so a zero-initialized decoder still emits
/// exact zeros).
pub(crate) const MEL_IN_SCALE: f64 = 0.25;
pub(crate) const MEL_IN_SHIFT: f64 = 2.0;
pub(crate) const MEL_OUT_SCALE: f64 = 4.0;

/// Parameter-group name prefixes, in registration order.
pub const GROUP_SPEAKER: &str = "spk.";
pub const GROUP_GE2E: &str = "ge2e.";
pub const GROUP_CONTENT: &str = "enc.";
pub const GROUP_DECODER: &str = "dec.";

#[derive(Clone)]
pub struct VoiceModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub speaker: SpeakerEncoder,
    pub ge2e: Ge2eHead,
    pub content: ContentEncoder,
    pub decoder: Decoder,
}

impl VoiceModel {
    /// Deterministic initialization from a seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = derived(seed, &[0x1217]);
        let speaker = SpeakerEncoder::init(&mut store, &mut rng, cfg);
        let ge2e = Ge2eHead::init(&mut store);
        let content = ContentEncoder::init(&mut store, &mut rng, cfg);
        let decoder = Decoder::init(&mut store, &mut rng, cfg);
        Ok(VoiceModel {
            cfg: cfg.clone(),
            store,
            speaker,
            ge2e,
            content,
            decoder,
        })
    }

    pub fn embed_utterance(&self, mel: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        self.speaker.embed_utterance(&self.store, mel)
    }

    pub fn encode_content(
        &self,
        mel: &MelSpectrogram,
        spk: &SpeakerEmbedding,
    ) -> Result<ContentEmbedding> {
        self.content.encode(&self.store, mel, spk)
    }

    pub fn decode(
        &self,
        content: &ContentEmbedding,
        spk: &SpeakerEmbedding,
        t_out: usize,
    ) -> Result<DecoderOutput> {
        self.decoder.decode(&self.store, content, spk, t_out)
    }

    /// Convert `source` into the target speaker's voice: re-decode the
    /// source's content codes under the target identity embedding.
    pub fn convert(
        &self,
        source: &MelSpectrogram,
        source_spk: &SpeakerEmbedding,
        target_spk: &SpeakerEmbedding,
    ) -> Result<MelSpectrogram> {
        let content = self.encode_content(source, source_spk)?;
        let out = self.decode(&content, target_spk, source.num_frames())?;
        Ok(out.post_mel)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_checkpoint(&self.store, path)
    }

    /// Load matching tensors from a checkpoint; groups absent from the file
    /// keep their initialization. The report lists what was loaded.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<LoadReport> {
        checkpoint::load_into_store(&mut self.store, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::NUM_MELS;
    use crate::nn::Tensor;
    use crate::rng::{seeded, uniform};

    fn random_mel(t: usize, seed: u64) -> MelSpectrogram {
        let mut rng = seeded(seed);
        let data = (0..t * NUM_MELS).map(|_| uniform(&mut rng, -8.0, 2.0)).collect();
        MelSpectrogram::new(Tensor::from_vec(&[t, NUM_MELS], data)).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::desk();
        let a = VoiceModel::init(&cfg, 5).unwrap();
        let b = VoiceModel::init(&cfg, 5).unwrap();
        let c = VoiceModel::init(&cfg, 6).unwrap();
        assert!(a.store.bits_eq(&b.store));
        assert!(!a.store.bits_eq(&c.store));
    }

    #[test]
    fn self_conversion_equals_reconstruction_bit_exactly() {
        let cfg = ModelConfig::desk();
        let model = VoiceModel::init(&cfg, 1).unwrap();
        let mel = random_mel(24, 2);
        let s = model.embed_utterance(&mel).unwrap();
        let converted = model.convert(&mel, &s, &s).unwrap();
        let content = model.encode_content(&mel, &s).unwrap();
        let recon = model.decode(&content, &s, mel.num_frames()).unwrap();
        assert!(converted.frames().bits_eq(recon.post_mel.frames()));
    }

    #[test]
    fn conversion_never_mutates_parameters() {
        let cfg = ModelConfig::desk();
        let model = VoiceModel::init(&cfg, 3).unwrap();
        let before = model.store.group_bits("");
        let mel = random_mel(20, 4);
        let s1 = model.embed_utterance(&mel).unwrap();
        let mel2 = random_mel(20, 5);
        let s2 = model.embed_utterance(&mel2).unwrap();
        let a = model.convert(&mel, &s1, &s2).unwrap();
        let b = model.convert(&mel, &s1, &s2).unwrap();
        assert!(a.frames().bits_eq(b.frames()), "conversion not deterministic");
        assert_eq!(before, model.store.group_bits(""));
    }
}

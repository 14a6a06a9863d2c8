//! Model and training configuration.

use crate::error::{Error, Result};

/// Network dimensions. `default()` is the full-scale architecture; `desk()`
/// shrinks everything so the whole pipeline trains on a laptop CPU in
/// minutes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Speaker embedding width.
    pub d_spk: usize,
    /// Hidden size of the two speaker-encoder LSTM layers.
    pub spk_hidden: usize,
    /// Channels of the three content-encoder convolutions.
    pub enc_conv_channels: usize,
    /// Per-direction bottleneck width of the content BLSTM stack.
    pub enc_bottleneck: usize,
    /// Temporal pooling factor of the content bottleneck.
    pub pool_factor: usize,
    /// Add the attention input back onto its output instead of replacing it.
    pub attention_residual: bool,
    /// Channels of the three decoder convolutions.
    pub dec_conv_channels: usize,
    /// Hidden size of the three decoder LSTM layers.
    pub dec_lstm_hidden: usize,
    /// Channels of the five postnet convolutions.
    pub postnet_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_spk: 256,
            spk_hidden: 768,
            enc_conv_channels: 512,
            enc_bottleneck: 32,
            pool_factor: 32,
            attention_residual: false,
            dec_conv_channels: 512,
            dec_lstm_hidden: 1024,
            postnet_channels: 512,
        }
    }
}

impl ModelConfig {
    pub fn full() -> Self {
        Self::default()
    }

    /// Laptop-CPU dimensions used by the synthetic-corpus experiments.
    pub fn desk() -> Self {
        ModelConfig {
            d_spk: 64,
            spk_hidden: 64,
            enc_conv_channels: 64,
            enc_bottleneck: 8,
            pool_factor: 8,
            attention_residual: false,
            dec_conv_channels: 64,
            dec_lstm_hidden: 64,
            postnet_channels: 64,
        }
    }

    /// Width of the content codes (both BLSTM directions concatenated).
    pub fn content_width(&self) -> usize {
        2 * self.enc_bottleneck
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_spk == 0
            || self.spk_hidden == 0
            || self.enc_conv_channels == 0
            || self.enc_bottleneck == 0
            || self.dec_conv_channels == 0
            || self.dec_lstm_hidden == 0
            || self.postnet_channels == 0
        {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.pool_factor == 0 {
            return Err(Error::invalid("pool_factor must be at least 1"));
        }
        Ok(())
    }
}

/// Conversion-training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Weight of the speaker consistency loss in the total objective.
    pub lambda_scl: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep the pretrained speaker encoder fixed (contractually true; the
    /// flag exists for ablation experiments only).
    pub freeze_speaker_encoder: bool,
    /// Stop consistency-loss gradients at the content encoder's parameters.
    pub freeze_content_on_scl: bool,
    /// Random crop length (frames) for training utterances; utterances
    /// shorter than this are used whole.
    pub crop_frames: usize,
    /// Also penalize the pre-postnet reconstruction.
    pub include_prenet_loss: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_scl: 0.5,
            learning_rate: 1e-4,
            steps: 2000,
            batch_size: 1,
            seed: 0,
            freeze_speaker_encoder: true,
            freeze_content_on_scl: true,
            crop_frames: 64,
            include_prenet_loss: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_scl < 0.0 || !self.lambda_scl.is_finite() {
            return Err(Error::invalid("lambda_scl must be finite and >= 0"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.crop_frames == 0 {
            return Err(Error::invalid("crop_frames must be at least 1"));
        }
        Ok(())
    }
}

/// Speaker-encoder pretraining hyperparameters (verification-style batches
/// of `speakers_per_batch × utts_per_speaker` utterances).
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerPretrainConfig {
    pub steps: usize,
    pub speakers_per_batch: usize,
    pub utts_per_speaker: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub crop_frames: usize,
}

impl Default for SpeakerPretrainConfig {
    fn default() -> Self {
        SpeakerPretrainConfig {
            steps: 500,
            speakers_per_batch: 4,
            utts_per_speaker: 4,
            learning_rate: 1e-3,
            seed: 0,
            crop_frames: 64,
        }
    }
}

impl SpeakerPretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.speakers_per_batch < 2 {
            return Err(Error::invalid(
                "speaker pretraining needs at least 2 speakers per batch",
            ));
        }
        if self.utts_per_speaker < 2 {
            return Err(Error::invalid(
                "speaker pretraining needs at least 2 utterances per speaker",
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

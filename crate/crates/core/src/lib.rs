//! Desk-scale non-parallel voice conversion.
//!
//! An auto-encoder that factors speech into a speaker identity embedding and
//! a low-rate linguistic content code, trained jointly with a
//! self-reconstruction loss and a speaker consistency loss computed on
//! converted outputs. The network stack (convolutions, LSTMs, self-attention,
//! temporal max pooling) is built on an in-crate reverse-mode tape whose
//! gradients are verified by central finite differences.
//!
//! Crate layout mirrors the processing pipeline:
//! - [`audio`]: WAV ingestion, log-mel analysis, Griffin-Lim inversion
//! - [`nn`]: tensors, autodiff tape, layers, optimizer, gradient checking
//! - [`speaker`]: identity encoder and its verification-style pretraining
//! - [`content`]: attentive-bottleneck content encoder
//! - [`decoder`]: spectrogram decoder and voice conversion
//! - [`train`]: the two-pass training strategy and checkpointing
//! - [`eval`]: probe-classifier and conversion-direction measurements
//! - [`data`]: corpus loading and the synthetic two-factor corpus

pub mod audio;
pub mod config;
pub mod content;
pub mod data;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rng;
pub mod speaker;
pub mod train;

pub use audio::{MelSpectrogram, Waveform, NUM_MELS};
pub use config::{ModelConfig, TrainingConfig};
pub use content::ContentEmbedding;
pub use decoder::DecoderOutput;
pub use error::{Error, Result};
pub use model::VoiceModel;
pub use speaker::SpeakerEmbedding;

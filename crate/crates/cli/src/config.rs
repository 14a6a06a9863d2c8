//! Line-oriented `key = value` run configuration.
//!
//! Unknown keys are rejected. `retone config --dump-defaults` prints the full
//! schema with the shipped defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use retone_core::config::{ModelConfig, SpeakerPretrainConfig, TrainingConfig};
use retone_core::data::SplitConfig;
use retone_core::eval::{ConversionEvalConfig, ProbeConfig};

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model_seed: u64,
    pub model: ModelConfig,
    pub train: TrainingConfig,
    pub pretrain: SpeakerPretrainConfig,
    pub split: SplitConfig,
    pub probe: ProbeConfig,
    pub conversion: ConversionEvalConfig,
    pub eval_seed: u64,
    pub gl_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model_seed: 1,
            // Desk-scale dimensions: the CLI is sized for laptop-CPU
            // experiments; full-scale dims are reachable through the keys.
            model: ModelConfig::desk(),
            train: TrainingConfig {
                learning_rate: 1e-3,
                seed: 5,
                ..Default::default()
            },
            pretrain: SpeakerPretrainConfig {
                seed: 11,
                ..Default::default()
            },
            split: SplitConfig {
                held_out_speakers: 0,
                eval_fraction: 0.25,
                seed: 7,
            },
            probe: ProbeConfig::default(),
            conversion: ConversionEvalConfig {
                seed: 13,
                ..Default::default()
            },
            eval_seed: 13,
            gl_iters: 50,
        }
    }
}

macro_rules! set_field {
    ($target:expr, $value:expr, $key:expr) => {
        $target = $value
            .parse()
            .with_context(|| format!("invalid value for {}", $key))?
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {} is not `key = value`: {raw:?}", lineno + 1);
            };
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.seed" => set_field!(self.model_seed, value, key),
            "model.d_spk" => set_field!(self.model.d_spk, value, key),
            "model.spk_hidden" => set_field!(self.model.spk_hidden, value, key),
            "model.enc_conv_channels" => set_field!(self.model.enc_conv_channels, value, key),
            "model.enc_bottleneck" => set_field!(self.model.enc_bottleneck, value, key),
            "model.pool_factor" => set_field!(self.model.pool_factor, value, key),
            "model.attention_residual" => set_field!(self.model.attention_residual, value, key),
            "model.dec_conv_channels" => set_field!(self.model.dec_conv_channels, value, key),
            "model.dec_lstm_hidden" => set_field!(self.model.dec_lstm_hidden, value, key),
            "model.postnet_channels" => set_field!(self.model.postnet_channels, value, key),
            "train.lambda_scl" => set_field!(self.train.lambda_scl, value, key),
            "train.learning_rate" => set_field!(self.train.learning_rate, value, key),
            "train.steps" => set_field!(self.train.steps, value, key),
            "train.batch_size" => set_field!(self.train.batch_size, value, key),
            "train.seed" => set_field!(self.train.seed, value, key),
            "train.crop_frames" => set_field!(self.train.crop_frames, value, key),
            "train.freeze_speaker_encoder" => {
                set_field!(self.train.freeze_speaker_encoder, value, key)
            }
            "train.freeze_content_on_scl" => {
                set_field!(self.train.freeze_content_on_scl, value, key)
            }
            "train.include_prenet_loss" => set_field!(self.train.include_prenet_loss, value, key),
            "pretrain.steps" => set_field!(self.pretrain.steps, value, key),
            "pretrain.speakers_per_batch" => {
                set_field!(self.pretrain.speakers_per_batch, value, key)
            }
            "pretrain.utts_per_speaker" => set_field!(self.pretrain.utts_per_speaker, value, key),
            "pretrain.learning_rate" => set_field!(self.pretrain.learning_rate, value, key),
            "pretrain.seed" => set_field!(self.pretrain.seed, value, key),
            "pretrain.crop_frames" => set_field!(self.pretrain.crop_frames, value, key),
            "data.held_out_speakers" => set_field!(self.split.held_out_speakers, value, key),
            "data.eval_fraction" => set_field!(self.split.eval_fraction, value, key),
            "data.split_seed" => set_field!(self.split.seed, value, key),
            "eval.probe_steps" => set_field!(self.probe.steps, value, key),
            "eval.probe_learning_rate" => set_field!(self.probe.learning_rate, value, key),
            "eval.targets_per_source" => {
                set_field!(self.conversion.targets_per_source, value, key)
            }
            "eval.seed" => {
                set_field!(self.eval_seed, value, key);
                self.conversion.seed = self.eval_seed;
            }
            "convert.gl_iters" => set_field!(self.gl_iters, value, key),
            other => bail!("unknown config key `{other}`"),
        }
        // Keep nested probe configs in sync with the top-level probe keys.
        self.conversion.probe = self.probe.clone();
        Ok(())
    }

    pub fn dump_defaults() -> String {
        let d = RunConfig::default();
        format!(
            "# retone run configuration (defaults shown; desk-scale dimensions)\n\
             model.seed = {}\n\
             model.d_spk = {}\n\
             model.spk_hidden = {}\n\
             model.enc_conv_channels = {}\n\
             model.enc_bottleneck = {}\n\
             model.pool_factor = {}\n\
             model.attention_residual = {}\n\
             model.dec_conv_channels = {}\n\
             model.dec_lstm_hidden = {}\n\
             model.postnet_channels = {}\n\
             train.lambda_scl = {}\n\
             train.learning_rate = {}\n\
             train.steps = {}\n\
             train.batch_size = {}\n\
             train.seed = {}\n\
             train.crop_frames = {}\n\
             train.freeze_speaker_encoder = {}\n\
             train.freeze_content_on_scl = {}\n\
             train.include_prenet_loss = {}\n\
             pretrain.steps = {}\n\
             pretrain.speakers_per_batch = {}\n\
             pretrain.utts_per_speaker = {}\n\
             pretrain.learning_rate = {}\n\
             pretrain.seed = {}\n\
             pretrain.crop_frames = {}\n\
             data.held_out_speakers = {}\n\
             data.eval_fraction = {}\n\
             data.split_seed = {}\n\
             eval.probe_steps = {}\n\
             eval.probe_learning_rate = {}\n\
             eval.targets_per_source = {}\n\
             eval.seed = {}\n\
             convert.gl_iters = {}\n",
            d.model_seed,
            d.model.d_spk,
            d.model.spk_hidden,
            d.model.enc_conv_channels,
            d.model.enc_bottleneck,
            d.model.pool_factor,
            d.model.attention_residual,
            d.model.dec_conv_channels,
            d.model.dec_lstm_hidden,
            d.model.postnet_channels,
            d.train.lambda_scl,
            d.train.learning_rate,
            d.train.steps,
            d.train.batch_size,
            d.train.seed,
            d.train.crop_frames,
            d.train.freeze_speaker_encoder,
            d.train.freeze_content_on_scl,
            d.train.include_prenet_loss,
            d.pretrain.steps,
            d.pretrain.speakers_per_batch,
            d.pretrain.utts_per_speaker,
            d.pretrain.learning_rate,
            d.pretrain.seed,
            d.pretrain.crop_frames,
            d.split.held_out_speakers,
            d.split.eval_fraction,
            d.split.seed,
            d.probe.steps,
            d.probe.learning_rate,
            d.conversion.targets_per_source,
            d.eval_seed,
            d.gl_iters,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_the_dump() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, RunConfig::dump_defaults()).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        let d = RunConfig::default();
        assert_eq!(cfg.model, d.model);
        assert_eq!(cfg.train, d.train);
        assert_eq!(cfg.pretrain, d.pretrain);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "model.banana = 3\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(format!("{err:#}").contains("unknown config key"));
    }

    #[test]
    fn bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "train.steps = lots\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}

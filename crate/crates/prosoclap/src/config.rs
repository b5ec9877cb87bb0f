//! Run configuration: one JSON document merging every module's settings.
//! Unknown keys are rejected; every field has the documented default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::FeatureConfig;
use crate::corpus::Scale;
use crate::error::{Error, Result};
use crate::model::{ProsodyEncoderConfig, TextEncoderConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub bpe_vocab_size: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self { bpe_vocab_size: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Text-speech pairs per contrastive batch (N).
    pub batch_pairs: usize,
    pub lr: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
    /// Initial temperature (the logit multiplier itself, not its log).
    pub temperature_init: f64,
    pub temperature_max: f64,
    pub seed: u64,
    pub scale: Scale,
    /// Ablation: drop the BPE stream from the text encoder.
    pub no_bpe: bool,
    pub min_occurrences: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub max_grad_norm: f64,
    pub checkpoint_every: u64,
    /// Every k-th utterance is held out for retrieval evaluation.
    pub eval_every_utterance: usize,
    pub eval_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_pairs: 8,
            lr: 0.0005,
            total_steps: 2000,
            warmup_steps: 500,
            temperature_init: 1.0 / 0.07,
            temperature_max: 100.0,
            seed: 0,
            scale: Scale::Phoneme,
            no_bpe: false,
            min_occurrences: 2,
            max_grad_norm: 1.0,
            checkpoint_every: 500,
            eval_every_utterance: 10,
            eval_batches: 50,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    pub features: FeatureConfig,
    pub text_encoder: TextEncoderConfig,
    pub prosody_encoder: ProsodyEncoderConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.text_encoder.validate()?;
        self.prosody_encoder.validate(self.features.segment_len)?;
        if self.text_encoder.joint_dim != self.prosody_encoder.joint_dim {
            return Err(Error::ConfigInvalid(format!(
                "joint dims disagree: text {} vs prosody {}",
                self.text_encoder.joint_dim, self.prosody_encoder.joint_dim
            )));
        }
        if self.train.batch_pairs < 2 {
            return Err(Error::ConfigInvalid("batch_pairs must be >= 2".into()));
        }
        if self.train.lr <= 0.0 {
            return Err(Error::ConfigInvalid("lr must be positive".into()));
        }
        if self.train.temperature_init <= 0.0 {
            return Err(Error::NonPositiveTemperature(self.train.temperature_init));
        }
        if self.frontend.bpe_vocab_size < 2 {
            return Err(Error::ConfigInvalid("bpe_vocab_size must be >= 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let json = r#"{"train": {"batch_pairs": 8, "mystery": 1}}"#;
        let parsed: std::result::Result<RunConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let mut cfg = RunConfig::default();
        cfg.train.batch_pairs = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.temperature_init = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::NonPositiveTemperature(_))));
        let mut cfg = RunConfig::default();
        cfg.text_encoder.joint_dim = 64;
        assert!(cfg.validate().is_err());
    }
}

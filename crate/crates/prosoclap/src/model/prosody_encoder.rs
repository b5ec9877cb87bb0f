//! Prosody encoder: strided 1-D residual convolution stages over a token's
//! mel segment, attentive pooling, and joint projection.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audio::SpeechSegment;
use crate::error::{Error, Result};
use crate::nn::layers::{AttnPoolP, JointProjectionP, LinearP, ResUnitP};
use crate::nn::params::{Binds, ParamStore};
use crate::nn::tape::{Tape, Var};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProsodyEncoderConfig {
    /// Residual stages; each downsamples time by 2 at entry.
    pub residual_blocks: usize,
    /// Conv layers per stage; two convs per residual unit.
    pub convs_per_block: usize,
    pub hidden: usize,
    pub pool_hidden: usize,
    pub pool_heads: usize,
    pub kernel: usize,
    pub joint_dim: usize,
}

impl Default for ProsodyEncoderConfig {
    fn default() -> Self {
        Self {
            residual_blocks: 4,
            convs_per_block: 12,
            hidden: 192,
            pool_hidden: 768,
            pool_heads: 4,
            kernel: 3,
            joint_dim: 192,
        }
    }
}

impl ProsodyEncoderConfig {
    pub fn validate(&self, segment_len: usize) -> Result<()> {
        if self.residual_blocks == 0 || self.convs_per_block == 0 || self.hidden == 0 {
            return Err(Error::ConfigInvalid("prosody encoder sizes must be >= 1".into()));
        }
        if self.convs_per_block % 2 != 0 {
            return Err(Error::ConfigInvalid(
                "convs_per_block must be even (two convs per residual unit)".into(),
            ));
        }
        if self.pool_hidden % self.pool_heads != 0 {
            return Err(Error::ConfigInvalid(format!(
                "pool_hidden {} not divisible by pool_heads {}",
                self.pool_hidden, self.pool_heads
            )));
        }
        if segment_len % (1 << self.residual_blocks) != 0 {
            return Err(Error::ConfigInvalid(format!(
                "segment length {segment_len} not divisible by 2^{}",
                self.residual_blocks
            )));
        }
        Ok(())
    }

    pub fn pooled_steps(&self, segment_len: usize) -> usize {
        segment_len >> self.residual_blocks
    }
}

/// Scale applied to floor-relative log-mel values; maps the ~11.5-unit
/// dynamic range onto O(1) network inputs.
const INPUT_SCALE: f64 = 0.25;

pub struct ProsodyEncoderModel {
    pub cfg: ProsodyEncoderConfig,
    pub mel_bins: usize,
    pub segment_len: usize,
    /// Log-mel silence floor; padding maps to exactly zero input.
    pub log_floor: f64,
    pub input_proj: LinearP,
    pub stages: Vec<Vec<ResUnitP>>,
    pub pool: AttnPoolP,
    pub projection: JointProjectionP,
}

impl ProsodyEncoderModel {
    pub fn new(
        cfg: &ProsodyEncoderConfig,
        mel_bins: usize,
        segment_len: usize,
        log_floor: f64,
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate(segment_len)?;
        let units_per_stage = cfg.convs_per_block / 2;
        let mut stages = Vec::with_capacity(cfg.residual_blocks);
        for s in 0..cfg.residual_blocks {
            let mut units = Vec::with_capacity(units_per_stage);
            for u in 0..units_per_stage {
                let stride = if u == 0 { 2 } else { 1 };
                units.push(ResUnitP::new(
                    store,
                    rng,
                    &format!("{prefix}.stage{s}.unit{u}"),
                    cfg.hidden,
                    cfg.kernel,
                    stride,
                ));
            }
            stages.push(units);
        }
        Ok(Self {
            cfg: cfg.clone(),
            mel_bins,
            segment_len,
            log_floor,
            input_proj: LinearP::new(store, rng, &format!("{prefix}.input"), mel_bins, cfg.hidden),
            stages,
            pool: AttnPoolP::new(
                store,
                rng,
                &format!("{prefix}.pool"),
                cfg.hidden,
                cfg.pool_hidden,
                cfg.pool_heads,
                cfg.pooled_steps(segment_len),
            ),
            projection: JointProjectionP::new(
                store,
                rng,
                &format!("{prefix}.speech_proj"),
                cfg.pool_hidden,
                cfg.joint_dim,
            ),
        })
    }

    /// Global prosody encoding of one segment: (1 x pool_hidden).
    pub fn forward(&self, tape: &mut Tape, binds: &Binds, seg: &SpeechSegment) -> Result<Var> {
        let dim = seg.values.dim();
        if dim != (self.mel_bins, self.segment_len) {
            return Err(Error::ShapeMismatch { got: dim, want: (self.mel_bins, self.segment_len) });
        }
        // (F x L) -> rows over time (L x F), floor-relative and rescaled so
        // padding is exactly zero and patches are O(1)
        let normalized = seg.values.t().mapv(|v| (v - self.log_floor) * INPUT_SCALE);
        let x = tape.constant(normalized);
        let mut h = self.input_proj.apply(tape, binds, x);
        for stage in &self.stages {
            for unit in stage {
                h = unit.apply(tape, binds, h);
            }
        }
        Ok(self.pool.apply(tape, binds, h))
    }

    pub fn project(&self, tape: &mut Tape, binds: &Binds, enc: Var) -> Var {
        self.projection.apply(tape, binds, enc)
    }
}

//! Dual-stream text encoder: phoneme FFT stack, BPE FFT stack, word-pooling
//! alignment bridge, fusion FFT stack, token selection and joint projection.

use ndarray::Array2;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Scale;
use crate::error::{Error, Result};
use crate::nn::layers::{sinusoidal_pe, EmbeddingP, FftBlockP, FwdCtx, JointProjectionP};
use crate::nn::params::{Binds, ParamStore};
use crate::nn::tape::{segment_mean_forward, Tape, Var};
use crate::text::TextItem;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextEncoderConfig {
    pub hidden: usize,
    pub ffn: usize,
    pub kernel: usize,
    pub blocks_per_stack: usize,
    pub fusion_blocks: usize,
    pub heads: usize,
    pub dropout: f64,
    pub joint_dim: usize,
    pub use_bpe: bool,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 192,
            ffn: 768,
            kernel: 5,
            blocks_per_stack: 4,
            fusion_blocks: 4,
            heads: 2,
            dropout: 0.1,
            joint_dim: 192,
            use_bpe: true,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.ffn == 0 || self.kernel == 0 || self.blocks_per_stack == 0 {
            return Err(Error::ConfigInvalid("text encoder sizes must be >= 1".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::ConfigInvalid(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

pub struct TextEncoderModel {
    pub cfg: TextEncoderConfig,
    pub ph_embed: EmbeddingP,
    pub bpe_embed: EmbeddingP,
    pub ph_stack: Vec<FftBlockP>,
    pub bpe_stack: Vec<FftBlockP>,
    pub fusion_stack: Vec<FftBlockP>,
    pub projection: JointProjectionP,
}

impl TextEncoderModel {
    pub fn new(
        cfg: &TextEncoderConfig,
        ph_vocab: usize,
        bpe_vocab: usize,
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let mk_stack = |store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, n: usize| {
            (0..n)
                .map(|i| {
                    FftBlockP::new(
                        store,
                        rng,
                        &format!("{prefix}.{name}.{i}"),
                        cfg.hidden,
                        cfg.ffn,
                        cfg.kernel,
                        cfg.heads,
                    )
                })
                .collect::<Vec<_>>()
        };
        Ok(Self {
            cfg: cfg.clone(),
            ph_embed: EmbeddingP::new(store, rng, &format!("{prefix}.ph_embed"), ph_vocab, cfg.hidden),
            bpe_embed: EmbeddingP::new(store, rng, &format!("{prefix}.bpe_embed"), bpe_vocab, cfg.hidden),
            ph_stack: mk_stack(store, rng, "ph_stack", cfg.blocks_per_stack),
            bpe_stack: mk_stack(store, rng, "bpe_stack", cfg.blocks_per_stack),
            fusion_stack: mk_stack(store, rng, "fusion", cfg.fusion_blocks),
            projection: JointProjectionP::new(
                store,
                rng,
                &format!("{prefix}.text_proj"),
                cfg.hidden,
                cfg.joint_dim,
            ),
        })
    }

    /// Embedding + sinusoidal positions + FFT blocks over one token stream.
    pub fn fft_stack_forward(
        &self,
        tape: &mut Tape,
        binds: &Binds,
        embed: &EmbeddingP,
        stack: &[FftBlockP],
        ids: &[u32],
        pad: Option<&[bool]>,
        ctx: &mut FwdCtx,
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut x = embed.lookup(tape, binds, ids);
        let pe = sinusoidal_pe(ids.len(), self.cfg.hidden);
        x = tape.add_const(x, &pe);
        if let Some(p) = pad {
            let rows: Vec<usize> = p.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
            if !rows.is_empty() {
                x = tape.zero_rows(x, rows);
            }
        }
        for block in stack {
            x = block.apply(tape, binds, x, pad, ctx);
        }
        Ok(x)
    }

    /// Full text pass: returns the phoneme-level encoding sequence (P x hidden).
    /// With `use_bpe` off the output depends on the phoneme stream alone.
    pub fn text_forward(
        &self,
        tape: &mut Tape,
        binds: &Binds,
        item: &TextItem,
        ctx: &mut FwdCtx,
    ) -> Result<Var> {
        let ph_h = self.fft_stack_forward(tape, binds, &self.ph_embed, &self.ph_stack, &item.phonemes, None, ctx)?;
        let fused = if self.cfg.use_bpe {
            let bpe_h =
                self.fft_stack_forward(tape, binds, &self.bpe_embed, &self.bpe_stack, &item.bpes, None, ctx)?;
            let n_words = word_count(&item.bpe2word)?;
            validate_expand(&item.ph2word, n_words)?;
            let word_h = tape.segment_mean(bpe_h, item.bpe2word.clone(), n_words);
            let bpe_ph = tape.gather(word_h, item.ph2word.clone());
            tape.add(ph_h, bpe_ph)
        } else {
            ph_h
        };
        let pe = sinusoidal_pe(item.phonemes.len(), self.cfg.hidden);
        let mut x = tape.add_const(fused, &pe);
        for block in &self.fusion_stack {
            x = block.apply(tape, binds, x, None, ctx);
        }
        Ok(x)
    }

    /// Token encoding at a scale: phoneme scale indexes directly, word scale
    /// pools the phoneme-level encodings to words first.
    pub fn select_token_encoding(
        &self,
        tape: &mut Tape,
        encodings: Var,
        item: &TextItem,
        scale: Scale,
        position: usize,
    ) -> Result<Var> {
        match scale {
            Scale::Phoneme => {
                let len = tape.shape(encodings).0;
                if position >= len {
                    return Err(Error::PositionOutOfRange { position, scale: "phoneme".into(), len });
                }
                Ok(tape.gather(encodings, vec![position]))
            }
            Scale::Word => {
                let n_words = word_count(&item.ph2word)?;
                if position >= n_words {
                    return Err(Error::PositionOutOfRange { position, scale: "word".into(), len: n_words });
                }
                let pooled = tape.segment_mean(encodings, item.ph2word.clone(), n_words);
                Ok(tape.gather(pooled, vec![position]))
            }
        }
    }

    /// Layer norm, linear map to the joint space, unit normalization.
    pub fn project(&self, tape: &mut Tape, binds: &Binds, tok: Var) -> Var {
        self.projection.apply(tape, binds, tok)
    }
}

/// Number of words covered by a unit->word alignment; errors on gaps or
/// decreasing maps.
pub fn word_count(unit2word: &[usize]) -> Result<usize> {
    if unit2word.is_empty() {
        return Err(Error::EmptySequence);
    }
    if unit2word[0] != 0 {
        return Err(Error::AlignmentGap(0));
    }
    let mut prev = 0usize;
    for &w in unit2word {
        if w < prev || w > prev + 1 {
            return Err(Error::AlignmentGap(prev + 1));
        }
        prev = w;
    }
    Ok(prev + 1)
}

fn validate_expand(ph2word: &[usize], n_words: usize) -> Result<()> {
    if let Some(&bad) = ph2word.iter().find(|&&w| w >= n_words) {
        return Err(Error::IndexOutOfRange { index: bad, len: n_words });
    }
    Ok(())
}

/// Arithmetic mean of the unit rows inside each word (pure-array form).
pub fn word_pool(hidden: &Array2<f64>, unit2word: &[usize]) -> Result<Array2<f64>> {
    if hidden.nrows() != unit2word.len() {
        return Err(Error::ShapeMismatch {
            got: (hidden.nrows(), hidden.ncols()),
            want: (unit2word.len(), hidden.ncols()),
        });
    }
    let n_words = word_count(unit2word)?;
    Ok(segment_mean_forward(hidden, unit2word, n_words))
}

/// Repeat each word row across its phonemes (pure-array form).
pub fn word2ph_expand(word_hidden: &Array2<f64>, ph2word: &[usize]) -> Result<Array2<f64>> {
    let n_words = word_hidden.nrows();
    let mut out = Array2::zeros((ph2word.len(), word_hidden.ncols()));
    for (i, &w) in ph2word.iter().enumerate() {
        if w >= n_words {
            return Err(Error::IndexOutOfRange { index: w, len: n_words });
        }
        out.row_mut(i).assign(&word_hidden.row(w));
    }
    Ok(out)
}

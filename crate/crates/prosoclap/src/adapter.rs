//! Frozen multi-scale text encoders as a phoneme-level feature provider, and
//! a small regression probe that measures how much prosody (per-word pitch
//! and duration) the frozen features carry.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{word2ph_expand, word_pool};
use crate::nn::adam::Adam;
use crate::nn::layers::{FwdCtx, LinearP};
use crate::nn::params::{bind_all, ParamStore};
use crate::nn::tape::Tape;
use crate::pretrain::ModelPair;
use crate::text::{TextFrontend, TextItem};

/// Immutable provider over one or two trained scales. Feature calls never
/// mutate state.
pub struct FrozenFeatureProvider {
    pub ph: ModelPair,
    pub word: Option<ModelPair>,
    pub frontend: TextFrontend,
}

impl FrozenFeatureProvider {
    pub fn from_checkpoints(ph: &Checkpoint, word: Option<&Checkpoint>) -> Result<Self> {
        let (ph_models, _) = ModelPair::from_checkpoint(ph)?;
        let word_models = match word {
            Some(w) => {
                let (m, _) = ModelPair::from_checkpoint(w)?;
                if m.text.cfg.hidden != ph_models.text.cfg.hidden {
                    return Err(Error::ConfigInvalid(format!(
                        "scale hidden sizes disagree: ph {} vs word {}",
                        ph_models.text.cfg.hidden, m.text.cfg.hidden
                    )));
                }
                Some(m)
            }
            None => None,
        };
        Ok(Self { ph: ph_models, word: word_models, frontend: ph.frontend.clone() })
    }

    /// Phoneme-level features: phoneme-scale encoder output plus the
    /// word-scale encoder output pooled to words and expanded back, summed.
    /// Deterministic (inference mode, dropout off).
    pub fn frozen_text_features(&self, item: &TextItem) -> Result<Array2<f64>> {
        let ph_feats = encoder_features(&self.ph, item)?;
        match &self.word {
            Some(word_models) => {
                let word_feats = encoder_features(word_models, item)?;
                let pooled = word_pool(&word_feats, &item.ph2word)?;
                let expanded = word2ph_expand(&pooled, &item.ph2word)?;
                Ok(ph_feats + &expanded)
            }
            None => Ok(ph_feats),
        }
    }

    /// Parameter checksum across scales; unchanged by any number of feature
    /// calls or probe trainings.
    pub fn checksum(&self) -> u64 {
        let mut h = self.ph.store.checksum();
        if let Some(w) = &self.word {
            h ^= w.store.checksum().rotate_left(17);
        }
        h
    }
}

fn encoder_features(models: &ModelPair, item: &TextItem) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let binds = bind_all(&mut tape, &models.store);
    let enc = models
        .text
        .text_forward(&mut tape, &binds, item, &mut FwdCtx::eval())?;
    Ok(tape.value(enc).clone())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Cap on training rows (words); keeps the probe a few seconds of work.
    pub max_rows: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 300, lr: 0.01, seed: 0, max_rows: 4000 }
    }
}

/// Two dense layers on word-pooled frozen features predicting per-word
/// (mean pitch, duration). Inputs and targets are z-scored with the training
/// statistics stored here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: [f64; 2],
    pub y_std: [f64; 2],
}

impl Probe {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Predict (pitch_hz, dur_sec) for one feature row.
    pub fn predict(&self, x: &[f64]) -> [f64; 2] {
        let d = self.x_mean.len();
        let h = self.b1.len();
        let mut hid = vec![0.0; h];
        for j in 0..h {
            let mut a = self.b1[j];
            for i in 0..d {
                let xn = (x[i] - self.x_mean[i]) / self.x_std[i];
                a += xn * self.w1[i][j];
            }
            hid[j] = crate::nn::tape::gelu_tanh(a);
        }
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let mut a = self.b2[k];
            for j in 0..h {
                a += hid[j] * self.w2[j][k];
            }
            *o = a * self.y_std[k] + self.y_mean[k];
        }
        out
    }
}

/// Word-pooled frozen features and (pitch, duration) targets for a corpus
/// subset, one row per word.
pub fn probe_dataset(
    provider: &FrozenFeatureProvider,
    corpus: &Corpus,
    members: &[usize],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<[f64; 2]> = Vec::new();
    for &u_idx in members {
        let utt = &corpus.utterances[u_idx];
        if utt.word_pitch_hz.is_empty() || utt.word_dur_sec.is_empty() {
            continue;
        }
        let feats = provider.frozen_text_features(&utt.text_item)?;
        let pooled = word_pool(&feats, &utt.text_item.ph2word)?;
        for w in 0..utt.text_item.words.len() {
            xs.push(pooled.row(w).to_vec());
            ys.push([utt.word_pitch_hz[w], utt.word_dur_sec[w]]);
        }
    }
    if xs.is_empty() {
        return Err(Error::MissingTargets);
    }
    let d = xs[0].len();
    let x = Array2::from_shape_fn((xs.len(), d), |(i, j)| xs[i][j]);
    let y = Array2::from_shape_fn((ys.len(), 2), |(i, j)| ys[i][j]);
    Ok((x, y))
}

/// Fit the probe on frozen features with full-batch Adam. The provider's
/// parameters are never touched.
pub fn probe_train(
    provider: &FrozenFeatureProvider,
    corpus: &Corpus,
    train_members: &[usize],
    cfg: &ProbeConfig,
) -> Result<Probe> {
    let (x_raw, y_raw) = probe_dataset(provider, corpus, train_members)?;
    let n = x_raw.nrows().min(cfg.max_rows);
    let d = x_raw.ncols();

    let col_stats = |m: &Array2<f64>, j: usize| {
        let col: Vec<f64> = (0..n).map(|i| m[(i, j)]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        (mean, var.sqrt().max(1e-6))
    };
    let x_stats: Vec<(f64, f64)> = (0..d).map(|j| col_stats(&x_raw, j)).collect();
    let y_stats: Vec<(f64, f64)> = (0..2).map(|j| col_stats(&y_raw, j)).collect();

    let xn = Array2::from_shape_fn((n, d), |(i, j)| (x_raw[(i, j)] - x_stats[j].0) / x_stats[j].1);
    let yn = Array2::from_shape_fn((n, 2), |(i, j)| (y_raw[(i, j)] - y_stats[j].0) / y_stats[j].1);

    let mut store = ParamStore::new();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let l1 = LinearP::new(&mut store, &mut rng, "probe.l1", d, cfg.hidden);
    let l2 = LinearP::new(&mut store, &mut rng, "probe.l2", cfg.hidden, 2);
    let mut adam = Adam::new(&store);

    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let binds = bind_all(&mut tape, &store);
        let xv = tape.constant(xn.clone());
        let yv = tape.constant(yn.clone());
        let h = l1.apply(&mut tape, &binds, xv);
        let h = tape.gelu(h);
        let pred = l2.apply(&mut tape, &binds, h);
        let diff = tape.sub(pred, yv);
        let sq = tape.mul(diff, diff);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss, store.len())?;
        adam.step(&mut store, &grads, cfg.lr);
    }

    let to_vec2 = |a: &Array2<f64>| -> Vec<Vec<f64>> {
        (0..a.nrows()).map(|i| a.row(i).to_vec()).collect()
    };
    Ok(Probe {
        w1: to_vec2(store.value(l1.w)),
        b1: store.value(l1.b).row(0).to_vec(),
        w2: to_vec2(store.value(l2.w)),
        b2: store.value(l2.b).row(0).to_vec(),
        x_mean: x_stats.iter().map(|s| s.0).collect(),
        x_std: x_stats.iter().map(|s| s.1).collect(),
        y_mean: [y_stats[0].0, y_stats[1].0],
        y_std: [y_stats[0].1, y_stats[1].1],
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeMetrics {
    pub pitch_mae_hz: f64,
    pub dur_mae_sec: f64,
    pub rows: usize,
}

/// Mean absolute errors on held-out rows.
pub fn probe_eval(
    probe: &Probe,
    provider: &FrozenFeatureProvider,
    corpus: &Corpus,
    eval_members: &[usize],
) -> Result<ProbeMetrics> {
    let (x, y) = probe_dataset(provider, corpus, eval_members)?;
    let mut abs = [0.0f64; 2];
    for i in 0..x.nrows() {
        let pred = probe.predict(&x.row(i).to_vec());
        for k in 0..2 {
            abs[k] += (pred[k] - y[(i, k)]).abs();
        }
    }
    let n = x.nrows() as f64;
    Ok(ProbeMetrics { pitch_mae_hz: abs[0] / n, dur_mae_sec: abs[1] / n, rows: x.nrows() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::corpus::Scale;
    use crate::pretrain::ModelPair;
    use crate::synth::{generate, SynthSpec};
    use crate::text::Lexicon;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.text_encoder.hidden = 8;
        cfg.text_encoder.ffn = 16;
        cfg.text_encoder.kernel = 3;
        cfg.text_encoder.blocks_per_stack = 1;
        cfg.text_encoder.fusion_blocks = 1;
        cfg.text_encoder.joint_dim = 8;
        cfg.text_encoder.dropout = 0.0;
        cfg.prosody_encoder.residual_blocks = 2;
        cfg.prosody_encoder.convs_per_block = 2;
        cfg.prosody_encoder.hidden = 8;
        cfg.prosody_encoder.pool_hidden = 8;
        cfg.prosody_encoder.pool_heads = 2;
        cfg.prosody_encoder.joint_dim = 8;
        cfg.features.mel_bins = 40;
        cfg.features.segment_len = 32;
        cfg.train.total_steps = 0;
        cfg
    }

    fn provider_over(dir: &std::path::Path, word_scale: bool) -> (FrozenFeatureProvider, Corpus) {
        let spec = SynthSpec { n_utterances: 300, seed: 5, ..SynthSpec::default() };
        let report = generate(&spec, dir).unwrap();
        let lex = Lexicon::load(&report.lexicon).unwrap();
        let corpus = Corpus::ingest(&report.manifest, lex, 120).unwrap();

        let cfg = tiny_cfg();
        let models = ModelPair::new(&cfg, corpus.frontend.ph_vocab.len(), corpus.frontend.bpe_vocab.len()).unwrap();
        let adam = crate::nn::adam::Adam::new(&models.store);
        let rng = ChaCha20Rng::seed_from_u64(0);
        let ckpt_ph = models.to_checkpoint(&corpus.frontend, &adam, 0, &rng);

        let word_ckpt = word_scale.then(|| {
            let mut wcfg = cfg.clone();
            wcfg.train.scale = Scale::Word;
            wcfg.train.seed = 1;
            let wm = ModelPair::new(&wcfg, corpus.frontend.ph_vocab.len(), corpus.frontend.bpe_vocab.len()).unwrap();
            let wadam = crate::nn::adam::Adam::new(&wm.store);
            wm.to_checkpoint(&corpus.frontend, &wadam, 0, &rng)
        });
        let provider = FrozenFeatureProvider::from_checkpoints(&ckpt_ph, word_ckpt.as_ref()).unwrap();
        (provider, corpus)
    }

    #[test]
    fn features_have_phoneme_length_and_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (provider, corpus) = provider_over(dir.path(), true);
        for u in corpus.utterances.iter().take(20) {
            let f1 = provider.frozen_text_features(&u.text_item).unwrap();
            assert_eq!(f1.nrows(), u.text_item.phonemes.len());
            let f2 = provider.frozen_text_features(&u.text_item).unwrap();
            for (a, b) in f1.iter().zip(f2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn word_scale_absent_means_phoneme_features_alone() {
        let dir = tempfile::tempdir().unwrap();
        let (with_word, corpus) = provider_over(dir.path(), true);
        let ph_only = FrozenFeatureProvider {
            ph: ModelPair::from_checkpoint(
                &with_word.ph.to_checkpoint(
                    &corpus.frontend,
                    &crate::nn::adam::Adam::new(&with_word.ph.store),
                    0,
                    &ChaCha20Rng::seed_from_u64(0),
                ),
            )
            .unwrap()
            .0,
            word: None,
            frontend: corpus.frontend.clone(),
        };
        let item = &corpus.utterances[0].text_item;
        let ph_feats = encoder_features(&ph_only.ph, item).unwrap();
        let got = ph_only.frozen_text_features(item).unwrap();
        assert_eq!(got, ph_feats);
        // and the two-scale provider differs (word encoder contributes)
        let fused = with_word.frozen_text_features(item).unwrap();
        assert_ne!(fused, ph_feats);
    }

    #[test]
    fn feature_calls_and_probe_training_leave_parameters_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let (provider, corpus) = provider_over(dir.path(), true);
        let before = provider.checksum();
        let members: Vec<usize> = (0..corpus.utterances.len()).collect();
        let cfg = ProbeConfig { epochs: 20, ..ProbeConfig::default() };
        let probe = probe_train(&provider, &corpus, &members, &cfg).unwrap();
        let _ = probe_eval(&probe, &provider, &corpus, &members).unwrap();
        for u in corpus.utterances.iter().take(5) {
            let _ = provider.frozen_text_features(&u.text_item).unwrap();
        }
        assert_eq!(provider.checksum(), before);
    }

    #[test]
    fn probe_fits_constant_targets() {
        let dir = tempfile::tempdir().unwrap();
        let (provider, mut corpus) = provider_over(dir.path(), false);
        for u in &mut corpus.utterances {
            for p in &mut u.word_pitch_hz {
                *p = 140.0;
            }
            for d in &mut u.word_dur_sec {
                *d = 0.25;
            }
        }
        let members: Vec<usize> = (0..corpus.utterances.len()).collect();
        let cfg = ProbeConfig { epochs: 150, ..ProbeConfig::default() };
        let probe = probe_train(&provider, &corpus, &members, &cfg).unwrap();
        let metrics = probe_eval(&probe, &provider, &corpus, &members).unwrap();
        assert!(metrics.pitch_mae_hz < 1.0, "pitch mae {}", metrics.pitch_mae_hz);
        assert!(metrics.dur_mae_sec < 0.01, "dur mae {}", metrics.dur_mae_sec);
    }

    #[test]
    fn training_reduces_probe_loss() {
        let dir = tempfile::tempdir().unwrap();
        let (provider, corpus) = provider_over(dir.path(), false);
        let members: Vec<usize> = (0..corpus.utterances.len()).collect();
        let init = probe_train(&provider, &corpus, &members, &ProbeConfig { epochs: 0, ..ProbeConfig::default() }).unwrap();
        let trained = probe_train(&provider, &corpus, &members, &ProbeConfig { epochs: 200, ..ProbeConfig::default() }).unwrap();
        let m_init = probe_eval(&init, &provider, &corpus, &members).unwrap();
        let m_trained = probe_eval(&trained, &provider, &corpus, &members).unwrap();
        assert!(
            m_trained.pitch_mae_hz < m_init.pitch_mae_hz,
            "{} !< {}",
            m_trained.pitch_mae_hz,
            m_init.pitch_mae_hz
        );
    }

    #[test]
    fn zero_epoch_probe_predicts_the_training_mean() {
        // a probe with zeroed output weights predicts exactly y_mean, so its
        // MAE equals the mean absolute deviation of the targets
        let dir = tempfile::tempdir().unwrap();
        let (provider, corpus) = provider_over(dir.path(), false);
        let members: Vec<usize> = (0..corpus.utterances.len()).collect();
        let mut probe = probe_train(&provider, &corpus, &members, &ProbeConfig { epochs: 0, ..ProbeConfig::default() }).unwrap();
        for row in &mut probe.w2 {
            row.fill(0.0);
        }
        probe.b2.fill(0.0);
        let (_, y) = probe_dataset(&provider, &corpus, &members).unwrap();
        let metrics = probe_eval(&probe, &provider, &corpus, &members).unwrap();
        // constant-mean predictor MAE equals the mean absolute deviation
        let n = y.nrows() as f64;
        let mean_pitch = (0..y.nrows()).map(|i| y[(i, 0)]).sum::<f64>() / n;
        let mad: f64 = (0..y.nrows()).map(|i| (y[(i, 0)] - mean_pitch).abs()).sum::<f64>() / n;
        assert!((metrics.pitch_mae_hz - mad).abs() < 1e-9);
    }

    #[test]
    fn reproducible_metrics_under_fixed_seed() {
        let dir = tempfile::tempdir().unwrap();
        let (provider, corpus) = provider_over(dir.path(), false);
        let members: Vec<usize> = (0..corpus.utterances.len()).collect();
        let cfg = ProbeConfig { epochs: 30, ..ProbeConfig::default() };
        let a = probe_eval(&probe_train(&provider, &corpus, &members, &cfg).unwrap(), &provider, &corpus, &members).unwrap();
        let b = probe_eval(&probe_train(&provider, &corpus, &members, &cfg).unwrap(), &provider, &corpus, &members).unwrap();
        assert_eq!(a.pitch_mae_hz.to_bits(), b.pitch_mae_hz.to_bits());
        assert_eq!(a.dur_mae_sec.to_bits(), b.dur_mae_sec.to_bits());
    }
}

//! Multi-scale contrastive pre-training: similarity matrix, symmetric
//! cross-entropy with learnable temperature, the Adam training loop,
//! checkpointing and retrieval evaluation.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::RunConfig;
use crate::corpus::{
    build_token_index, sample_contrastive_batch, ContrastiveBatch, Corpus, MelStore, TokenIndex,
};
use crate::error::{Error, Result};
use crate::model::{ProsodyEncoderModel, TextEncoderModel};
use crate::nn::adam::{lr_at, Adam};
use crate::nn::layers::FwdCtx;
use crate::nn::params::{bind_all, Binds, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::text::TextFrontend;

/// Rng stream ids derived from the run seed; keeps init, training and
/// evaluation draws independent and individually reproducible.
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Both encoders plus the learnable log-temperature over one parameter store.
pub struct ModelPair {
    pub store: ParamStore,
    pub text: TextEncoderModel,
    pub prosody: ProsodyEncoderModel,
    pub log_tau: usize,
    pub config: RunConfig,
}

impl ModelPair {
    pub fn new(cfg: &RunConfig, ph_vocab: usize, bpe_vocab: usize) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(STREAM_INIT);
        let mut text_cfg = cfg.text_encoder.clone();
        text_cfg.use_bpe = text_cfg.use_bpe && !cfg.train.no_bpe;
        let text = TextEncoderModel::new(&text_cfg, ph_vocab, bpe_vocab, &mut store, &mut rng, "text")?;
        let prosody = ProsodyEncoderModel::new(
            &cfg.prosody_encoder,
            cfg.features.mel_bins,
            cfg.features.segment_len,
            cfg.features.log_floor(),
            &mut store,
            &mut rng,
            "prosody",
        )?;
        let log_tau = store.register(
            "loss.log_tau",
            Array2::from_elem((1, 1), cfg.train.temperature_init.ln()),
        );
        Ok(Self { store, text, prosody, log_tau, config: cfg.clone() })
    }

    pub fn tau(&self) -> f64 {
        self.store.value(self.log_tau)[(0, 0)].exp()
    }

    /// Joint embeddings for every batch item: returns (T, S), each (N x C).
    pub fn batch_embeddings(
        &self,
        tape: &mut Tape,
        binds: &Binds,
        batch: &ContrastiveBatch,
        ctx: &mut FwdCtx,
    ) -> Result<(Var, Var)> {
        let mut ts = Vec::with_capacity(batch.items.len());
        let mut ss = Vec::with_capacity(batch.items.len());
        for item in &batch.items {
            let enc = self.text.text_forward(tape, binds, &item.text_item, ctx)?;
            let tok = self.text.select_token_encoding(
                tape,
                enc,
                &item.text_item,
                batch.scale,
                item.token_position,
            )?;
            ts.push(self.text.project(tape, binds, tok));
            let penc = self.prosody.forward(tape, binds, &item.segment)?;
            ss.push(self.prosody.project(tape, binds, penc));
        }
        Ok((tape.concat_rows(&ts), tape.concat_rows(&ss)))
    }

    /// Cosine matrix of a batch under the current parameters (eval mode).
    pub fn cosine_matrix(&self, batch: &ContrastiveBatch) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let binds = bind_all(&mut tape, &self.store);
        let (t, s) = self.batch_embeddings(&mut tape, &binds, batch, &mut FwdCtx::eval())?;
        let st = tape.transpose(s);
        let c = tape.matmul(t, st);
        Ok(tape.value(c).clone())
    }

    /// Rebuild a pair from a checkpoint; every stored tensor must match a
    /// constructed parameter by name.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Adam)> {
        let mut pair = ModelPair::new(
            &ckpt.config,
            ckpt.frontend.ph_vocab.len(),
            ckpt.frontend.bpe_vocab.len(),
        )?;
        if ckpt.params.len() != pair.store.len() {
            return Err(Error::CheckpointMalformed(format!(
                "parameter count mismatch: stored {}, model {}",
                ckpt.params.len(),
                pair.store.len()
            )));
        }
        for (name, tensor) in &ckpt.params {
            let id = pair
                .store
                .id(name)
                .ok_or_else(|| Error::CheckpointMalformed(format!("unknown parameter {name}")))?;
            if pair.store.value(id).dim() != tensor.dim() {
                return Err(Error::CheckpointMalformed(format!("shape mismatch for {name}")));
            }
            pair.store.set_value(id, tensor.clone());
        }
        let mut adam = Adam::new(&pair.store);
        adam.t = ckpt.adam_t;
        for (name, m, v) in &ckpt.opt_state {
            let id = pair
                .store
                .id(name)
                .ok_or_else(|| Error::CheckpointMalformed(format!("unknown optimizer tensor {name}")))?;
            adam.m[id] = m.clone();
            adam.v[id] = v.clone();
        }
        Ok((pair, adam))
    }

    pub fn to_checkpoint(
        &self,
        frontend: &TextFrontend,
        adam: &Adam,
        step: u64,
        rng: &ChaCha20Rng,
    ) -> Checkpoint {
        let params = self
            .store
            .iter()
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect();
        let opt_state = (0..self.store.len())
            .map(|id| {
                (
                    self.store.name(id).to_string(),
                    adam.m[id].clone(),
                    adam.v[id].clone(),
                )
            })
            .collect();
        Checkpoint {
            config: self.config.clone(),
            frontend: frontend.clone(),
            step,
            adam_t: adam.t,
            rng: RngState::capture(rng),
            params,
            opt_state,
        }
    }
}

/// Exact pairwise dot products of two unit-norm embedding sets.
pub fn similarity_matrix(t: &Array2<f64>, s: &Array2<f64>) -> Result<Array2<f64>> {
    if t.nrows() != s.nrows() || t.ncols() != s.ncols() {
        return Err(Error::CountMismatch { text: t.nrows(), speech: s.nrows() });
    }
    Ok(t.dot(&s.t()))
}

/// Symmetric cross-entropy of a similarity matrix under temperature `tau`:
/// mean of row-wise and column-wise CE with diagonal targets (pure-array
/// reference used by tests and evaluation).
pub fn clip_loss_value(c: &Array2<f64>, tau: f64) -> Result<f64> {
    if c.nrows() != c.ncols() {
        return Err(Error::NonSquare { rows: c.nrows(), cols: c.ncols() });
    }
    if tau <= 0.0 {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let n = c.nrows();
    let ce = |row_major: bool| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| tau * if row_major { c[(i, j)] } else { c[(j, i)] })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            total += lse - logits[i];
        }
        total / n as f64
    };
    Ok(0.5 * (ce(true) + ce(false)))
}

/// Tape version of the symmetric cross-entropy over pre-temperature logits.
pub fn symmetric_ce(tape: &mut Tape, logits: Var) -> Var {
    let row_ls = tape.log_softmax_rows(logits);
    let row_diag = tape.take_diag(row_ls);
    let row_mean = tape.mean_all(row_diag);
    let lt = tape.transpose(logits);
    let col_ls = tape.log_softmax_rows(lt);
    let col_diag = tape.take_diag(col_ls);
    let col_mean = tape.mean_all(col_diag);
    let sum = tape.add(row_mean, col_mean);
    tape.scale(sum, -0.5)
}

/// Fractions of rows (text->speech) and columns (speech->text) whose diagonal
/// entry is the argmax.
pub fn retrieval_accuracy(c: &Array2<f64>) -> (f64, f64) {
    let n = c.nrows();
    let mut row_hits = 0usize;
    let mut col_hits = 0usize;
    for i in 0..n {
        let row_arg = (0..n).fold(0, |best, j| if c[(i, j)] > c[(i, best)] { j } else { best });
        if row_arg == i {
            row_hits += 1;
        }
        let col_arg = (0..n).fold(0, |best, j| if c[(j, i)] > c[(best, i)] { j } else { best });
        if col_arg == i {
            col_hits += 1;
        }
    }
    (row_hits as f64 / n as f64, col_hits as f64 / n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub acc_t2s: f64,
    pub acc_s2t: f64,
    pub tau: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub duplication_rate: f64,
}

/// Metrics log line (JSON-lines schema is part of the external interface).
#[derive(Serialize)]
struct MetricsLine {
    step: u64,
    loss: f64,
    acc_t2s: f64,
    acc_s2t: f64,
    tau: f64,
    lr: f64,
}

/// One optimization step: forward both encoders, symmetric CE, backprop,
/// Adam update, temperature clamp.
pub fn train_step(
    models: &mut ModelPair,
    adam: &mut Adam,
    batch: &ContrastiveBatch,
    step: u64,
    lr: f64,
    rng: &mut ChaCha20Rng,
) -> Result<StepMetrics> {
    let dropout = models.config.text_encoder.dropout;
    let mut tape = Tape::new();
    let binds = bind_all(&mut tape, &models.store);
    let mut ctx = FwdCtx::train(dropout, rng);
    let (t, s) = models.batch_embeddings(&mut tape, &binds, batch, &mut ctx)?;
    let st = tape.transpose(s);
    let c = tape.matmul(t, st);
    let cosines = tape.value(c).clone();
    let tau_var = {
        let lt = binds.var(models.log_tau);
        tape.exp(lt)
    };
    let logits = tape.mul_scalar_var(c, tau_var);
    let loss = symmetric_ce(&mut tape, logits);
    let loss_value = tape.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFiniteLoss { step, token: batch.token_symbol.clone() });
    }
    let mut grads = tape.backward(loss, models.store.len())?;
    let grad_norm = grads.global_norm();
    let max_norm = models.config.train.max_grad_norm;
    if max_norm > 0.0 && grad_norm > max_norm {
        let scale = max_norm / grad_norm;
        for g in grads.by_param.iter_mut().flatten() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    adam.step(&mut models.store, &grads, lr);
    // keep tau within the configured ceiling (log-parameterized, so it stays
    // positive regardless)
    let max_log = models.config.train.temperature_max.ln();
    let lt = models.store.value_mut(models.log_tau);
    if lt[(0, 0)] > max_log {
        lt[(0, 0)] = max_log as f32 as f64;
    }
    let (acc_t2s, acc_s2t) = retrieval_accuracy(&cosines);
    Ok(StepMetrics {
        step,
        loss: loss_value,
        acc_t2s,
        acc_s2t,
        tau: models.tau(),
        lr,
        grad_norm,
        duplication_rate: batch.duplication_rate,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RetrievalAccuracy {
    pub top1_text_to_speech: f64,
    pub top1_speech_to_text: f64,
}

/// Fraction of held-out batch items whose diagonal is the row/column argmax.
pub fn evaluate_retrieval(models: &ModelPair, batches: &[ContrastiveBatch]) -> Result<RetrievalAccuracy> {
    let mut t2s_sum = 0.0;
    let mut s2t_sum = 0.0;
    for batch in batches {
        let c = models.cosine_matrix(batch)?;
        let (a, b) = retrieval_accuracy(&c);
        t2s_sum += a;
        s2t_sum += b;
    }
    let n = batches.len().max(1) as f64;
    Ok(RetrievalAccuracy {
        top1_text_to_speech: t2s_sum / n,
        top1_speech_to_text: s2t_sum / n,
    })
}

/// Deterministically sample same-token batches from an index.
pub fn sample_batches(
    corpus: &Corpus,
    index: &TokenIndex,
    mels: &mut MelStore,
    n: usize,
    count: usize,
    segment_len: usize,
    log_floor: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<ContrastiveBatch>> {
    (0..count)
        .map(|_| sample_contrastive_batch(index, corpus, mels, n, segment_len, log_floor, rng, None))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub scale: String,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub eval: Option<RetrievalAccuracy>,
    pub mean_duplication_rate: Option<f64>,
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
}

/// Full training run: warmup+cosine schedule, JSON-lines metrics, rolling
/// checkpoints, held-out retrieval evaluation at the end. Resumable from the
/// rolling checkpoint.
pub fn run_pretraining(
    cfg: &RunConfig,
    corpus: &Corpus,
    out_dir: &Path,
    resume: bool,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    let metrics_path = out_dir.join("metrics.jsonl");

    let (train_idx, eval_idx) = corpus.split_indices(cfg.train.eval_every_utterance);
    let train_index = build_token_index(corpus, &train_idx, cfg.train.scale, cfg.train.min_occurrences)?;

    let (mut models, mut adam, mut train_rng, start_step) = if resume && ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let (models, adam) = ModelPair::from_checkpoint(&ckpt)?;
        let rng = ckpt.rng.restore();
        (models, adam, rng, ckpt.step)
    } else {
        let models = ModelPair::new(
            cfg,
            corpus.frontend.ph_vocab.len(),
            corpus.frontend.bpe_vocab.len(),
        )?;
        let adam = Adam::new(&models.store);
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(STREAM_TRAIN);
        let _ = std::fs::remove_file(&metrics_path);
        (models, adam, rng, 0)
    };

    let mut mels = MelStore::new();
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;

    let mut final_loss = None;
    let mut dup_sum = 0.0;
    let mut dup_count = 0u64;
    for step in start_step + 1..=cfg.train.total_steps {
        let lr = lr_at(step, cfg.train.lr, cfg.train.warmup_steps, cfg.train.total_steps);
        let batch = sample_contrastive_batch(
            &train_index,
            corpus,
            &mut mels,
            cfg.train.batch_pairs,
            cfg.features.segment_len,
            cfg.features.log_floor(),
            &mut train_rng,
            None,
        )?;
        let metrics = train_step(&mut models, &mut adam, &batch, step, lr, &mut train_rng)?;
        let line = MetricsLine {
            step: metrics.step,
            loss: metrics.loss,
            acc_t2s: metrics.acc_t2s,
            acc_s2t: metrics.acc_s2t,
            tau: metrics.tau,
            lr: metrics.lr,
        };
        writeln!(metrics_file, "{}", serde_json::to_string(&line)?)?;
        final_loss = Some(metrics.loss);
        dup_sum += metrics.duplication_rate;
        dup_count += 1;
        if cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 {
            models
                .to_checkpoint(&corpus.frontend, &adam, step, &train_rng)
                .save(&ckpt_path)?;
        }
    }
    models
        .to_checkpoint(&corpus.frontend, &adam, cfg.train.total_steps.max(start_step), &train_rng)
        .save(&ckpt_path)?;

    // eval batches must rank N distinct contexts, so only tokens with at
    // least N held-out occurrences are eligible
    let eval = if cfg.train.eval_batches > 0 && !eval_idx.is_empty() {
        match build_token_index(corpus, &eval_idx, cfg.train.scale, cfg.train.batch_pairs.max(2)) {
            Ok(eval_index) => {
                let mut eval_rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
                eval_rng.set_stream(STREAM_EVAL);
                let batches = sample_batches(
                    corpus,
                    &eval_index,
                    &mut mels,
                    cfg.train.batch_pairs,
                    cfg.train.eval_batches,
                    cfg.features.segment_len,
                    cfg.features.log_floor(),
                    &mut eval_rng,
                )?;
                Some(evaluate_retrieval(&models, &batches)?)
            }
            Err(Error::NoEligibleTokens { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let summary = RunSummary {
        scale: cfg.train.scale.to_string(),
        steps: cfg.train.total_steps,
        final_loss,
        eval,
        mean_duplication_rate: (dup_count > 0).then(|| dup_sum / dup_count as f64),
        checkpoint: ckpt_path,
        metrics_log: metrics_path,
    };
    std::fs::write(out_dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Evaluate a stored checkpoint against a corpus' held-out split.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    batches: usize,
) -> Result<RetrievalAccuracy> {
    let (models, _) = ModelPair::from_checkpoint(ckpt)?;
    let cfg = &ckpt.config;
    let (_, eval_idx) = corpus.split_indices(cfg.train.eval_every_utterance);
    let eval_index =
        build_token_index(corpus, &eval_idx, cfg.train.scale, cfg.train.batch_pairs.max(2))?;
    let mut eval_rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
    eval_rng.set_stream(STREAM_EVAL);
    let mut mels = MelStore::new();
    let eval_batches = sample_batches(
        corpus,
        &eval_index,
        &mut mels,
        cfg.train.batch_pairs,
        batches,
        cfg.features.segment_len,
        cfg.features.log_floor(),
        &mut eval_rng,
    )?;
    evaluate_retrieval(&models, &eval_batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn similarity_of_orthonormal_sets() {
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let c = similarity_matrix(&t, &t).unwrap();
        assert_eq!(c, Array2::<f64>::eye(2));
        let s = t.mapv(|v| -v);
        let c = similarity_matrix(&t, &s).unwrap();
        assert_eq!(c, Array2::<f64>::eye(2).mapv(|v: f64| -v));
    }

    #[test]
    fn similarity_matches_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        use rand::Rng;
        let norm_rows = |mut m: Array2<f64>| {
            for mut r in m.rows_mut() {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.mapv_inplace(|v| v / n);
            }
            m
        };
        let t = norm_rows(Array2::from_shape_fn((5, 7), |_| rng.gen_range(-1.0..1.0)));
        let s = norm_rows(Array2::from_shape_fn((5, 7), |_| rng.gen_range(-1.0..1.0)));
        let c = similarity_matrix(&t, &s).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = (0..7).map(|k| t[(i, k)] * s[(j, k)]).sum();
                assert!((c[(i, j)] - dot).abs() < 1e-6);
                assert!(c[(i, j)] >= -1.0 - 1e-9 && c[(i, j)] <= 1.0 + 1e-9);
            }
        }
        assert!(similarity_matrix(&t, &Array2::zeros((4, 7))).is_err());
    }

    #[test]
    fn clip_loss_single_pair_is_zero() {
        let c = array![[0.73]];
        assert_eq!(clip_loss_value(&c, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn clip_loss_uniform_matrix_is_ln_n() {
        for n in [2usize, 8, 64] {
            for tau in [0.5, 1.0, 14.0] {
                let c = Array2::from_elem((n, n), 0.3);
                let loss = clip_loss_value(&c, tau).unwrap();
                assert!(
                    (loss - (n as f64).ln()).abs() < 1e-6,
                    "n={n} tau={tau}: {loss}"
                );
            }
        }
    }

    #[test]
    fn clip_loss_validates_inputs() {
        assert!(matches!(
            clip_loss_value(&Array2::zeros((2, 3)), 1.0),
            Err(Error::NonSquare { .. })
        ));
        assert!(matches!(
            clip_loss_value(&Array2::zeros((2, 2)), 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn clip_loss_matches_hand_evaluation() {
        // direct softmax/CE evaluation of both directions for a random 4x4
        let c = array![
            [0.9, 0.1, -0.3, 0.2],
            [0.0, 0.7, 0.5, -0.1],
            [0.2, -0.6, 0.8, 0.3],
            [-0.4, 0.25, 0.1, 0.6]
        ];
        let tau: f64 = 2.5;
        let mut hand = 0.0;
        for direction in 0..2 {
            let mut total = 0.0;
            for i in 0..4 {
                let mut denom = 0.0;
                for j in 0..4 {
                    let v = if direction == 0 { c[(i, j)] } else { c[(j, i)] };
                    denom += (tau * v).exp();
                }
                total += -((tau * c[(i, i)]).exp() / denom).ln();
            }
            hand += 0.5 * total / 4.0;
        }
        let got = clip_loss_value(&c, tau).unwrap();
        assert!((got - hand).abs() < 1e-6, "{got} vs {hand}");
    }

    #[test]
    fn tape_loss_agrees_with_pure_loss() {
        let c = array![
            [0.9, 0.1, -0.3],
            [0.0, 0.7, 0.5],
            [0.2, -0.6, 0.8]
        ];
        let tau = 1.7;
        let mut tape = Tape::new();
        let cv = tape.constant(c.clone());
        let logits = tape.scale(cv, tau);
        let loss = symmetric_ce(&mut tape, logits);
        let got = tape.scalar(loss);
        let want = clip_loss_value(&c, tau).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn loss_invariant_under_simultaneous_permutation() {
        let c = array![
            [0.9, 0.1, -0.3],
            [0.0, 0.7, 0.5],
            [0.2, -0.6, 0.8]
        ];
        let perm = [2usize, 0, 1];
        let mut cp = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                cp[(i, j)] = c[(perm[i], perm[j])];
            }
        }
        let a = clip_loss_value(&c, 3.0).unwrap();
        let b = clip_loss_value(&cp, 3.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn uniform_gradient_pushes_diagonal_up() {
        // dL/dC_ii < 0 and dL/dC_ij > 0 for uniform C
        let n = 4;
        let c0 = Array2::from_elem((n, n), 0.2);
        let mut tape = Tape::new();
        let cv = tape.param_leaf(c0, 0);
        let logits = tape.scale(cv, 5.0);
        let loss = symmetric_ce(&mut tape, logits);
        let grads = tape.backward(loss, 1).unwrap();
        let g = grads.by_param[0].as_ref().unwrap();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    assert!(g[(i, j)] < 0.0);
                } else {
                    assert!(g[(i, j)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn retrieval_accuracy_identity_is_perfect() {
        let c = Array2::<f64>::eye(6);
        let (a, b) = retrieval_accuracy(&c);
        assert_eq!(a, 1.0);
        assert_eq!(b, 1.0);
    }
}

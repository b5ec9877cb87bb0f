//! Finite-difference and invariant suites behind the `gradcheck` and
//! `selftest` subcommands. The acceptance tests run the same checks.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::audio::SpeechSegment;
use crate::config::RunConfig;
use crate::corpus::{ContrastiveBatch, BatchItem, Scale};
use crate::error::Result;
use crate::model::{word2ph_expand, word_pool};
use crate::nn::gradcheck::{check_array_grads, check_param_grads, max_rel_err};
use crate::nn::layers::FwdCtx;
use crate::nn::params::bind_all;
use crate::nn::tape::Tape;
use crate::pretrain::{clip_loss_value, symmetric_ce, ModelPair};
use crate::text::TextItem;

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn check(name: &str, started: Instant, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed, detail, seconds: started.elapsed().as_secs_f64() }
}

/// Analytic gradients of the contrastive loss wrt T, S and log-tau versus
/// central finite differences (N=4, C=8).
pub fn clip_loss_gradient_check() -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let n = 4;
    let c = 8;
    let mut inputs = vec![
        Array2::from_shape_fn((n, c), |_| rng.gen_range(-1.0..1.0)),
        Array2::from_shape_fn((n, c), |_| rng.gen_range(-1.0..1.0)),
        Array2::from_elem((1, 1), (1.0f64 / 0.07).ln()),
    ];
    let f = |xs: &[Array2<f64>]| -> (f64, Vec<Array2<f64>>) {
        let mut tape = Tape::new();
        let t = tape.param_leaf(xs[0].clone(), 0);
        let s = tape.param_leaf(xs[1].clone(), 1);
        let lt = tape.param_leaf(xs[2].clone(), 2);
        let st = tape.transpose(s);
        let cmat = tape.matmul(t, st);
        let tau = tape.exp(lt);
        let logits = tape.mul_scalar_var(cmat, tau);
        let loss = symmetric_ce(&mut tape, logits);
        let v = tape.scalar(loss);
        let grads = tape.backward(loss, 3).expect("loss is scalar");
        let gs = grads.by_param.into_iter().map(|g| g.expect("all inputs used")).collect();
        (v, gs)
    };
    let pairs = check_array_grads(&mut inputs, f, 1e-6);
    let err = max_rel_err(&pairs);
    Ok(check(
        "clip_loss gradients (T, S, log_tau; N=4, C=8)",
        started,
        err < 1e-4,
        format!("max rel err {err:.3e} (tol 1e-4)"),
    ))
}

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.text_encoder.hidden = 8;
    cfg.text_encoder.ffn = 16;
    cfg.text_encoder.kernel = 3;
    cfg.text_encoder.blocks_per_stack = 2;
    cfg.text_encoder.fusion_blocks = 1;
    cfg.text_encoder.heads = 2;
    cfg.text_encoder.dropout = 0.0;
    cfg.text_encoder.joint_dim = 6;
    cfg.prosody_encoder.residual_blocks = 2;
    cfg.prosody_encoder.convs_per_block = 2;
    cfg.prosody_encoder.hidden = 8;
    cfg.prosody_encoder.pool_hidden = 8;
    cfg.prosody_encoder.pool_heads = 2;
    cfg.prosody_encoder.joint_dim = 6;
    cfg.features.mel_bins = 6;
    cfg.features.segment_len = 16;
    cfg
}

fn synthetic_batch(rng: &mut ChaCha20Rng, n: usize, mel_bins: usize, seg_len: usize) -> ContrastiveBatch {
    let items = (0..n)
        .map(|k| {
            let n_words = 2 + k % 2;
            let mut phonemes = Vec::new();
            let mut ph2word = Vec::new();
            let mut bpes = Vec::new();
            let mut bpe2word = Vec::new();
            for w in 0..n_words {
                for _ in 0..2 {
                    phonemes.push(rng.gen_range(2..10));
                    ph2word.push(w);
                }
                bpes.push(rng.gen_range(2..10));
                bpe2word.push(w);
            }
            let values = Array2::from_shape_fn((mel_bins, seg_len), |_| rng.gen_range(-11.5..0.0));
            BatchItem {
                utterance: k,
                text_item: TextItem {
                    phonemes,
                    bpes,
                    words: (0..n_words).map(|w| format!("w{w}")).collect(),
                    ph2word,
                    bpe2word,
                },
                segment: SpeechSegment { values, valid_frames: seg_len },
                token_position: 0,
            }
        })
        .collect();
    ContrastiveBatch {
        scale: Scale::Phoneme,
        token_symbol: "tok".into(),
        items,
        duplication_rate: 0.0,
    }
}

/// Full-model gradient check on tiny configs: the whole contrastive loss
/// (both encoders, projections, temperature) against finite differences.
pub fn full_model_gradient_check() -> Result<CheckResult> {
    let started = Instant::now();
    let cfg = tiny_run_config();
    let mut models = ModelPair::new(&cfg, 12, 12)?;
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let batch = synthetic_batch(&mut rng, 3, cfg.features.mel_bins, cfg.features.segment_len);

    let mut check_rng = ChaCha20Rng::seed_from_u64(29);
    let log_tau = models.log_tau;
    let report = check_param_grads(
        &mut models.store,
        |store| {
            let mut tape = Tape::new();
            let binds = bind_all(&mut tape, store);
            let mut ctx = FwdCtx::eval();
            // rebuild the loss graph against the perturbed store
            let mut ts = Vec::new();
            let mut ss = Vec::new();
            for item in &batch.items {
                let enc = models.text.text_forward(&mut tape, &binds, &item.text_item, &mut ctx)?;
                let tok = models.text.select_token_encoding(
                    &mut tape,
                    enc,
                    &item.text_item,
                    batch.scale,
                    item.token_position,
                )?;
                ts.push(models.text.project(&mut tape, &binds, tok));
                let penc = models.prosody.forward(&mut tape, &binds, &item.segment)?;
                ss.push(models.prosody.project(&mut tape, &binds, penc));
            }
            let t = tape.concat_rows(&ts);
            let s = tape.concat_rows(&ss);
            let st = tape.transpose(s);
            let cmat = tape.matmul(t, st);
            let tau = tape.exp(binds.var(log_tau));
            let logits = tape.mul_scalar_var(cmat, tau);
            let loss = symmetric_ce(&mut tape, logits);
            Ok((tape, loss))
        },
        3,
        1e-5,
        1e-3,
        &mut check_rng,
    )?;
    Ok(check(
        "full-model gradients (tiny text+prosody encoders)",
        started,
        report.passed(),
        format!(
            "max rel err {:.3e} over {} sampled coordinates (tol 1e-3)",
            report.max_rel_err,
            report.checks.len()
        ),
    ))
}

pub fn gradcheck_suite() -> Result<Vec<CheckResult>> {
    Ok(vec![clip_loss_gradient_check()?, full_model_gradient_check()?])
}

/// Invariant sweeps: pooling round trip, loss oracles, projection norms,
/// determinism contracts.
pub fn selftest_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();

    // pooling round trip on 1000 random word-level sequences
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut exact = true;
    for _ in 0..1000 {
        let n_words = rng.gen_range(1..12);
        let c = rng.gen_range(1..16);
        let x = Array2::from_shape_fn((n_words, c), |_| rng.gen_range(-5.0..5.0));
        let mut ph2word = Vec::new();
        for w in 0..n_words {
            for _ in 0..rng.gen_range(1..6) {
                ph2word.push(w);
            }
        }
        let back = word_pool(&word2ph_expand(&x, &ph2word)?, &ph2word)?;
        if back
            .iter()
            .zip(x.iter())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            exact = false;
            break;
        }
    }
    out.push(check(
        "word_pool . word2ph_expand == identity (1000 random sequences, exact)",
        started,
        exact,
        format!("elapsed {:.2}s (budget 5s)", started.elapsed().as_secs_f64()),
    ));

    // loss oracle: uniform similarity matrix gives ln N; single pair gives 0
    let started = Instant::now();
    let mut ok = clip_loss_value(&Array2::from_elem((1, 1), 0.4), 7.0)? == 0.0;
    let mut detail = String::new();
    for n in [2usize, 8, 64] {
        let loss = clip_loss_value(&Array2::from_elem((n, n), 0.25), 14.0)?;
        let err = (loss - (n as f64).ln()).abs();
        if err > 1e-6 {
            ok = false;
        }
        detail.push_str(&format!("N={n}: |loss - ln N| = {err:.2e}; "));
    }
    out.push(check("clip_loss uniform-matrix oracle (ln N)", started, ok, detail));

    // projection contract: unit norm and scale invariance on a tiny model
    let started = Instant::now();
    let cfg = tiny_run_config();
    let models = ModelPair::new(&cfg, 12, 12)?;
    let mut rng = ChaCha20Rng::seed_from_u64(37);
    let mut ok = true;
    for _ in 0..50 {
        let x = Array2::from_shape_fn((1, cfg.text_encoder.hidden), |_| rng.gen_range(-2.0..2.0));
        let run = |input: &Array2<f64>| {
            let mut tape = Tape::new();
            let binds = bind_all(&mut tape, &models.store);
            let xv = tape.constant(input.clone());
            let y = models.text.project(&mut tape, &binds, xv);
            tape.value(y).clone()
        };
        let y = run(&x);
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            ok = false;
        }
        let y2 = run(&x.mapv(|v| v * 2.0));
        if y.iter().zip(y2.iter()).any(|(a, b)| (a - b).abs() > 1e-5) {
            ok = false;
        }
    }
    out.push(check(
        "joint projection unit norm and scale invariance",
        started,
        ok,
        "50 random inputs".into(),
    ));

    // determinism: identical forwards bitwise
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let batch = synthetic_batch(&mut rng, 3, cfg.features.mel_bins, cfg.features.segment_len);
    let c1 = models.cosine_matrix(&batch)?;
    let c2 = models.cosine_matrix(&batch)?;
    let ok = c1
        .iter()
        .zip(c2.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    out.push(check(
        "inference determinism (bitwise repeated forward)",
        started,
        ok,
        format!("cosine matrix {}x{}", c1.nrows(), c1.ncols()),
    ));

    Ok(out)
}


//! Command-line entrypoint wiring all modules.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
//! inputs), 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{probe_eval, probe_train, FrozenFeatureProvider, Probe, ProbeConfig};
use crate::analysis;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{build_token_index, Corpus, Scale};
use crate::error::Result;
use crate::pretrain::{evaluate_checkpoint, run_pretraining, ModelPair};
use crate::synth::{generate, SynthSpec};
use crate::text::Lexicon;
use crate::verify;

#[derive(Parser)]
#[command(name = "prosoclap", version, about = "Contrastive text-prosody pre-training toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus (manifest, mel caches, lexicon).
    Synth {
        /// Spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's utterance count.
        #[arg(long)]
        utterances: Option<usize>,
    },
    /// Build the token-occurrence inverted index from a manifest.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        scale: Scale,
        #[arg(long = "min-occ", default_value_t = 2)]
        min_occ: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long = "bpe-vocab", default_value_t = 1000)]
        bpe_vocab: usize,
    },
    /// Contrastive pre-training at one scale.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        scale: Option<Scale>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Ablation: drop the BPE stream.
        #[arg(long = "no-bpe")]
        no_bpe: bool,
        /// Continue from the rolling checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Held-out top-1 retrieval accuracy of a checkpoint.
    EvalRetrieval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Token self-similarity: one token's report, or a sweep mean.
    Selfsim {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Analyze this token; omit for a sweep over sampled tokens.
        #[arg(long)]
        token: Option<String>,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        batches: usize,
        /// Use projected joint embeddings instead of token encodings.
        #[arg(long)]
        joint: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        scale: Option<Scale>,
    },
    /// Export a token's cross-sentence similarity matrix as CSV (+ heatmap).
    Simmat {
        #[arg(long)]
        ckpt: PathBuf,
        /// One sentence per line.
        #[arg(long)]
        texts: PathBuf,
        #[arg(long)]
        token: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(long, value_enum)]
        scale: Option<Scale>,
        #[arg(long)]
        joint: bool,
    },
    /// Replace a token's text encoding in SRC with the one from REF.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "ckpt-word")]
        ckpt_word: Option<PathBuf>,
        #[arg(long)]
        src: String,
        #[arg(long = "ref")]
        reference: String,
        #[arg(long)]
        token: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "word")]
        scale: Scale,
    },
    /// Train the frozen-feature prosody probe.
    Probe {
        #[arg(long = "ckpt-ph")]
        ckpt_ph: PathBuf,
        #[arg(long = "ckpt-word")]
        ckpt_word: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Held-out pitch/duration MAE of a trained probe.
    ProbeEval {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "ckpt-ph")]
        ckpt_ph: Option<PathBuf>,
        #[arg(long = "ckpt-word")]
        ckpt_word: Option<PathBuf>,
    },
    /// Finite-difference gradient verification suites.
    Gradcheck,
    /// Invariant sweeps over the numerical core.
    Selftest,
}

/// Probe archive: the fitted head plus the checkpoints it was trained on.
#[derive(Serialize, Deserialize)]
struct ProbeFile {
    ckpt_ph: PathBuf,
    ckpt_word: Option<PathBuf>,
    probe: Probe,
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Synth { spec, out, seed, utterances } => {
            let mut spec = match spec {
                Some(path) => SynthSpec::load(&path)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(n) = utterances {
                spec.n_utterances = n;
            }
            let report = generate(&spec, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Cmd::Index { manifest, scale, min_occ, out, lexicon, bpe_vocab } => {
            let lexicon = load_lexicon(lexicon.as_deref())?;
            let corpus = Corpus::ingest(&manifest, lexicon, bpe_vocab)?;
            report_ingest(&corpus);
            let members: Vec<usize> = (0..corpus.utterances.len()).collect();
            let index = build_token_index(&corpus, &members, scale, min_occ)?;
            // occurrences keyed by utterance id for a self-contained file
            #[derive(Serialize)]
            struct IndexFile<'a> {
                scale: String,
                min_occurrences: usize,
                tokens: std::collections::BTreeMap<&'a String, Vec<(String, usize)>>,
            }
            let tokens = index
                .entries
                .iter()
                .map(|(tok, occs)| {
                    let named = occs
                        .iter()
                        .map(|&(u, p)| (corpus.utterances[u].id.clone(), p))
                        .collect();
                    (tok, named)
                })
                .collect();
            let file = IndexFile { scale: scale.to_string(), min_occurrences: min_occ, tokens };
            std::fs::write(&out, serde_json::to_vec_pretty(&file)?)?;
            println!(
                "indexed {} tokens / {} occurrences -> {}",
                index.entries.len(),
                index.total_occurrences(),
                out.display()
            );
            Ok(0)
        }
        Cmd::Pretrain { config, manifest, scale, out, lexicon, seed, steps, no_bpe, resume } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            if let Some(s) = scale {
                cfg.train.scale = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(n) = steps {
                cfg.train.total_steps = n;
            }
            if no_bpe {
                cfg.train.no_bpe = true;
            }
            cfg.validate()?;
            let lexicon = load_lexicon(lexicon.as_deref())?;
            let corpus = Corpus::ingest(&manifest, lexicon, cfg.frontend.bpe_vocab_size)?;
            report_ingest(&corpus);
            let summary = run_pretraining(&cfg, &corpus, &out, resume)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Cmd::EvalRetrieval { ckpt, manifest, batches } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let corpus = Corpus::ingest_with_frontend(&manifest, ckpt.frontend.clone())?;
            let batches = batches.unwrap_or(ckpt.config.train.eval_batches);
            let acc = evaluate_checkpoint(&ckpt, &corpus, batches)?;
            println!("{}", serde_json::to_string_pretty(&acc)?);
            Ok(0)
        }
        Cmd::Selfsim { ckpt, manifest, token, n, batches, joint, seed, scale } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let (models, _) = ModelPair::from_checkpoint(&ckpt)?;
            let corpus = Corpus::ingest_with_frontend(&manifest, ckpt.frontend.clone())?;
            let scale = scale.unwrap_or(ckpt.config.train.scale);
            let members: Vec<usize> = (0..corpus.utterances.len()).collect();
            let index = build_token_index(&corpus, &members, scale, 2)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed.unwrap_or(ckpt.config.train.seed));
            rng.set_stream(4);
            match token {
                Some(tok) => {
                    let report =
                        analysis::token_self_similarity(&models, &corpus, &index, &tok, n, &mut rng, joint)?;
                    println!("{}", serde_json::to_string_pretty(&report)?);
                }
                None => {
                    let mean =
                        analysis::self_similarity_sweep(&models, &corpus, &index, batches, n, &mut rng, joint)?;
                    println!(
                        "{}",
                        serde_json::json!({
                            "scale": scale.to_string(),
                            "batches": batches,
                            "contexts_per_batch": n,
                            "mean_self_similarity": mean,
                        })
                    );
                }
            }
            Ok(0)
        }
        Cmd::Simmat { ckpt, texts, token, out, png, scale, joint } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let (models, _) = ModelPair::from_checkpoint(&ckpt)?;
            let scale = scale.unwrap_or(ckpt.config.train.scale);
            let sentences: Vec<String> = std::fs::read_to_string(&texts)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            let m = analysis::export_similarity_matrix(
                &models,
                &ckpt.frontend,
                &sentences,
                &token,
                scale,
                joint,
                &out,
                png.as_deref(),
            )?;
            println!("wrote {}x{} similarity matrix to {}", m.nrows(), m.ncols(), out.display());
            Ok(0)
        }
        Cmd::Transfer { ckpt, ckpt_word, src, reference, token, out, scale } => {
            let ckpt_ph = Checkpoint::load(&ckpt)?;
            let ckpt_word = ckpt_word.map(|p| Checkpoint::load(&p)).transpose()?;
            let provider = FrozenFeatureProvider::from_checkpoints(&ckpt_ph, ckpt_word.as_ref())?;
            let src_item = provider.frontend.build_text_item(&src)?;
            let ref_item = provider.frontend.build_text_item(&reference)?;
            let feats = analysis::prosody_transfer(&provider, &src_item, &ref_item, &token, scale)?;
            analysis::write_feature_dump(&out, &feats)?;
            println!(
                "wrote {} x {} transferred features to {}",
                feats.nrows(),
                feats.ncols(),
                out.display()
            );
            Ok(0)
        }
        Cmd::Probe { ckpt_ph, ckpt_word, manifest, out, epochs, seed } => {
            let ph = Checkpoint::load(&ckpt_ph)?;
            let word = ckpt_word.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
            let provider = FrozenFeatureProvider::from_checkpoints(&ph, word.as_ref())?;
            let corpus = Corpus::ingest_with_frontend(&manifest, provider.frontend.clone())?;
            let (train_idx, _) = corpus.split_indices(ph.config.train.eval_every_utterance);
            let mut probe_cfg = ProbeConfig::default();
            if let Some(e) = epochs {
                probe_cfg.epochs = e;
            }
            if let Some(s) = seed {
                probe_cfg.seed = s;
            }
            let probe = probe_train(&provider, &corpus, &train_idx, &probe_cfg)?;
            let file = ProbeFile { ckpt_ph, ckpt_word, probe };
            std::fs::write(&out, serde_json::to_vec_pretty(&file)?)?;
            println!("wrote probe to {}", out.display());
            Ok(0)
        }
        Cmd::ProbeEval { probe, manifest, ckpt_ph, ckpt_word } => {
            let bytes = std::fs::read(&probe)?;
            let file: ProbeFile = serde_json::from_slice(&bytes)?;
            let ph_path = ckpt_ph.unwrap_or(file.ckpt_ph);
            let word_path = ckpt_word.or(file.ckpt_word);
            let ph = Checkpoint::load(&ph_path)?;
            let word = word_path.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
            let provider = FrozenFeatureProvider::from_checkpoints(&ph, word.as_ref())?;
            let corpus = Corpus::ingest_with_frontend(&manifest, provider.frontend.clone())?;
            let (_, eval_idx) = corpus.split_indices(ph.config.train.eval_every_utterance);
            let metrics = probe_eval(&file.probe, &provider, &corpus, &eval_idx)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(0)
        }
        Cmd::Gradcheck => {
            let results = verify::gradcheck_suite()?;
            Ok(print_checks(&results))
        }
        Cmd::Selftest => {
            let results = verify::selftest_suite()?;
            Ok(print_checks(&results))
        }
    }
}

fn print_checks(results: &[verify::CheckResult]) -> i32 {
    let mut all_ok = true;
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status}  {} — {} [{:.2}s]", r.name, r.detail, r.seconds);
        all_ok &= r.passed;
    }
    if all_ok {
        0
    } else {
        2
    }
}

fn load_lexicon(path: Option<&Path>) -> Result<Lexicon> {
    match path {
        Some(p) => Lexicon::load(p),
        None => Ok(Lexicon::new()),
    }
}

fn report_ingest(corpus: &Corpus) {
    eprintln!(
        "ingested {} utterances ({} rejected)",
        corpus.stats.accepted, corpus.stats.rejected
    );
    for (line, why) in corpus.stats.failures.iter().take(5) {
        eprintln!("  line {line}: {why}");
    }
    if corpus.stats.failures.len() > 5 {
        eprintln!("  ... and {} more", corpus.stats.failures.len() - 5);
    }
}


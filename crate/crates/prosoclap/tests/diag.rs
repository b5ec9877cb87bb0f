use prosoclap::config::RunConfig;
use prosoclap::corpus::{build_token_index, sample_contrastive_batch, Corpus, MelStore};
use prosoclap::nn::adam::Adam;
use prosoclap::nn::layers::FwdCtx;
use prosoclap::nn::params::bind_all;
use prosoclap::nn::tape::Tape;
use prosoclap::pretrain::{train_step, ModelPair};
use prosoclap::text::Lexicon;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::path::Path;

fn row_spread(m: &ndarray::Array2<f64>) -> f64 {
    // mean pairwise L2 distance between rows
    let n = m.nrows();
    let mut total = 0.0;
    let mut cnt = 0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..m.ncols()).map(|k| (m[(i, k)] - m[(j, k)]).powi(2)).sum::<f64>().sqrt();
            total += d;
            cnt += 1;
        }
    }
    total / cnt as f64
}

#[test]
#[ignore]
fn diagnose_training() {
    let manifest = Path::new("/tmp/exp/corpus/manifest.jsonl");
    let lex = Lexicon::load(Path::new("/tmp/exp/corpus/lexicon.txt")).unwrap();
    let cfg_bytes = std::fs::read("/tmp/exp/cfg.json").unwrap();
    let mut cfg: RunConfig = serde_json::from_slice(&cfg_bytes).unwrap();
    cfg.train.total_steps = 300;
    let corpus = Corpus::ingest(manifest, lex, cfg.frontend.bpe_vocab_size).unwrap();
    let (train_idx, _) = corpus.split_indices(10);
    let index = build_token_index(&corpus, &train_idx, cfg.train.scale, 2).unwrap();
    let mut models = ModelPair::new(&cfg, corpus.frontend.ph_vocab.len(), corpus.frontend.bpe_vocab.len()).unwrap();
    let mut adam = Adam::new(&models.store);
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    rng.set_stream(2);
    let mut mels = MelStore::new();

    for step in 1..=300u64 {
        let batch = sample_contrastive_batch(&index, &corpus, &mut mels, 8, 32, (1e-5f64).ln(), &mut rng, None).unwrap();
        if step == 1 || step % 50 == 0 {
            let mut tape = Tape::new();
            let binds = bind_all(&mut tape, &models.store);
            let (t, s) = models.batch_embeddings(&mut tape, &binds, &batch, &mut FwdCtx::eval()).unwrap();
            let tv = tape.value(t).clone();
            let sv = tape.value(s).clone();
            println!(
                "step {step}: tok {:8} T spread {:.5} S spread {:.5} tau {:.2}",
                batch.token_symbol, row_spread(&tv), row_spread(&sv), models.tau()
            );
        }
        let _ = train_step(&mut models, &mut adam, &batch, step, 1e-3, &mut rng).unwrap();
    }
}

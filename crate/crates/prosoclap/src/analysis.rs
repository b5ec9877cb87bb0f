//! Representation analyses: token self-similarity across contexts,
//! similarity-matrix export, and token-level prosody transfer.

use std::io::Read;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::adapter::FrozenFeatureProvider;
use crate::corpus::{sample_token_occurrences, Corpus, Scale, TokenIndex};
use crate::error::{Error, Result};
use crate::nn::layers::FwdCtx;
use crate::nn::params::bind_all;
use crate::nn::tape::{segment_mean_forward, Tape};
use crate::pretrain::ModelPair;
use crate::text::{TextFrontend, TextItem};

/// Mean pairwise cosine over all i != j pairs of one token's encodings under
/// different contexts. Low values mean context-sensitive representations.
pub fn self_similarity(encodings: &Array2<f64>) -> Result<f64> {
    let n = encodings.nrows();
    if n < 2 {
        return Err(Error::TooFewContexts(n));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| encodings.row(i).mapv(|v| v * v).sum().sqrt())
        .collect();
    if norms.iter().any(|&v| v < 1e-12) {
        return Err(Error::ZeroVector);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dot: f64 = encodings.row(i).dot(&encodings.row(j));
                total += dot / (norms[i] * norms[j]);
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

/// Full cosine matrix (diagonal 1 for nonzero rows).
pub fn cosine_matrix(encodings: &Array2<f64>) -> Result<Array2<f64>> {
    let n = encodings.nrows();
    let norms: Vec<f64> = (0..n)
        .map(|i| encodings.row(i).mapv(|v| v * v).sum().sqrt())
        .collect();
    if norms.iter().any(|&v| v < 1e-12) {
        return Err(Error::ZeroVector);
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        encodings.row(i).dot(&encodings.row(j)) / (norms[i] * norms[j])
    }))
}

/// Token encodings (pre-projection by default; `use_joint` switches to the
/// projected unit-norm embeddings) for a set of occurrences.
pub fn occurrence_encodings(
    models: &ModelPair,
    corpus: &Corpus,
    occurrences: &[(usize, usize)],
    scale: Scale,
    use_joint: bool,
) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(occurrences.len());
    for &(utt_idx, pos) in occurrences {
        let item = &corpus.utterances[utt_idx].text_item;
        rows.push(token_encoding(models, item, scale, pos, use_joint)?);
    }
    let cols = rows[0].len();
    Ok(Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j]))
}

fn token_encoding(
    models: &ModelPair,
    item: &TextItem,
    scale: Scale,
    position: usize,
    use_joint: bool,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let binds = bind_all(&mut tape, &models.store);
    let enc = models
        .text
        .text_forward(&mut tape, &binds, item, &mut FwdCtx::eval())?;
    let tok = models
        .text
        .select_token_encoding(&mut tape, enc, item, scale, position)?;
    let out = if use_joint {
        models.text.project(&mut tape, &binds, tok)
    } else {
        tok
    };
    Ok(tape.value(out).row(0).to_vec())
}

#[derive(Debug, Serialize)]
pub struct SelfSimilarityReport {
    pub token_symbol: String,
    pub scale: String,
    pub n_contexts: usize,
    pub s: f64,
    pub matrix: Vec<Vec<f64>>,
}

/// Self-similarity of one token over `n` sampled contexts.
pub fn token_self_similarity(
    models: &ModelPair,
    corpus: &Corpus,
    index: &TokenIndex,
    token: &str,
    n: usize,
    rng: &mut ChaCha20Rng,
    use_joint: bool,
) -> Result<SelfSimilarityReport> {
    let (symbol, occs, _) = sample_token_occurrences(index, n, rng, Some(token))?;
    let encodings = occurrence_encodings(models, corpus, &occs, index.scale, use_joint)?;
    let s = self_similarity(&encodings)?;
    let m = cosine_matrix(&encodings)?;
    Ok(SelfSimilarityReport {
        token_symbol: symbol,
        scale: index.scale.to_string(),
        n_contexts: occs.len(),
        s,
        matrix: (0..m.nrows()).map(|i| m.row(i).to_vec()).collect(),
    })
}

/// Mean per-batch self-similarity over sampled same-token batches.
pub fn self_similarity_sweep(
    models: &ModelPair,
    corpus: &Corpus,
    index: &TokenIndex,
    batches: usize,
    n: usize,
    rng: &mut ChaCha20Rng,
    use_joint: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..batches {
        let (_, occs, _) = sample_token_occurrences(index, n, rng, None)?;
        let encodings = occurrence_encodings(models, corpus, &occs, index.scale, use_joint)?;
        total += self_similarity(&encodings)?;
    }
    Ok(total / batches.max(1) as f64)
}

/// Locate a token's first occurrence in an item at a scale.
pub fn find_token_position(
    frontend: &TextFrontend,
    item: &TextItem,
    token: &str,
    scale: Scale,
) -> Option<usize> {
    match scale {
        Scale::Word => item.words.iter().position(|w| w == token),
        Scale::Phoneme => {
            let id = frontend.ph_vocab.id(token);
            if id == crate::text::UNK_ID && !frontend.ph_vocab.contains(token) {
                return None;
            }
            item.phonemes.iter().position(|&p| p == id)
        }
    }
}

/// Token encodings of one token across sentences, cosine matrix, CSV export
/// and optional heatmap rendering. Row order follows sentence order.
pub fn export_similarity_matrix(
    models: &ModelPair,
    frontend: &TextFrontend,
    sentences: &[String],
    token: &str,
    scale: Scale,
    use_joint: bool,
    out_csv: &Path,
    out_png: Option<&Path>,
) -> Result<Array2<f64>> {
    if sentences.len() < 2 {
        return Err(Error::TooFewContexts(sentences.len()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(sentences.len());
    for sentence in sentences {
        let item = frontend.build_text_item(sentence)?;
        let pos = find_token_position(frontend, &item, token, scale).ok_or_else(|| {
            Error::TokenAbsentInSentence { token: token.to_string(), sentence: sentence.clone() }
        })?;
        rows.push(token_encoding(models, &item, scale, pos, use_joint)?);
    }
    let cols = rows[0].len();
    let encodings = Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j]);
    let m = cosine_matrix(&encodings)?;
    write_matrix_csv(out_csv, &m)?;
    if let Some(png) = out_png {
        render_heatmap(png, &m)?;
    }
    Ok(m)
}

/// Plain CSV, one row per line; f64 round-trip formatting.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let content = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::ConfigInvalid(e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::ConfigInvalid("empty csv".into()));
    }
    let cols = rows[0].len();
    Ok(Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j]))
}

/// Cell-scaled grayscale heatmap; cosine -1 maps to black, +1 to white.
fn render_heatmap(path: &Path, m: &Array2<f64>) -> Result<()> {
    const CELL: u32 = 32;
    let n = m.nrows() as u32;
    let mut img = image::GrayImage::new(n * CELL, n * CELL);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let i = (y / CELL) as usize;
        let j = (x / CELL) as usize;
        let v = ((m[(i, j)] + 1.0) / 2.0).clamp(0.0, 1.0);
        *p = image::Luma([(v * 255.0).round() as u8]);
    }
    img.save(path)
        .map_err(|e| Error::ConfigInvalid(format!("heatmap: {e}")))?;
    Ok(())
}

/// Phoneme span of a token occurrence: the single position at phoneme scale,
/// the word's phoneme range at word scale.
fn token_span(item: &TextItem, scale: Scale, position: usize) -> Vec<usize> {
    match scale {
        Scale::Phoneme => vec![position],
        Scale::Word => item
            .ph2word
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == position)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Replace the source's feature rows over the token span with the reference
/// token's rows. Equal-length spans copy rows directly; mismatched word spans
/// use the reference span's pooled mean expanded over the source span. All
/// rows outside the span stay bit-identical.
pub fn prosody_transfer(
    provider: &FrozenFeatureProvider,
    source: &TextItem,
    reference: &TextItem,
    token: &str,
    scale: Scale,
) -> Result<Array2<f64>> {
    let src_pos = find_token_position(&provider.frontend, source, token, scale)
        .ok_or_else(|| Error::TokenAbsent(token.to_string()))?;
    let ref_pos = find_token_position(&provider.frontend, reference, token, scale)
        .ok_or_else(|| Error::TokenAbsent(token.to_string()))?;

    let mut src_feats = provider.frozen_text_features(source)?;
    let ref_feats = provider.frozen_text_features(reference)?;
    let src_span = token_span(source, scale, src_pos);
    let ref_span = token_span(reference, scale, ref_pos);

    if src_span.len() == ref_span.len() {
        for (dst, src_row) in src_span.iter().zip(&ref_span) {
            let row = ref_feats.row(*src_row).to_owned();
            src_feats.row_mut(*dst).assign(&row);
        }
    } else {
        // pooled reference encoding expanded over the source span
        let ref_rows = Array2::from_shape_fn((ref_span.len(), ref_feats.ncols()), |(i, j)| {
            ref_feats[(ref_span[i], j)]
        });
        let seg = vec![0usize; ref_span.len()];
        let pooled = segment_mean_forward(&ref_rows, &seg, 1);
        for &dst in &src_span {
            src_feats.row_mut(dst).assign(&pooled.row(0));
        }
    }
    Ok(src_feats)
}

const FEA_MAGIC: &[u8; 4] = b"FEA1";

/// Feature dump: magic `FEA1`, u32 rows, u32 cols, f32 row-major values.
pub fn write_feature_dump(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut out = Vec::with_capacity(12 + features.len() * 4);
    out.extend_from_slice(FEA_MAGIC);
    out.extend_from_slice(&(features.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.ncols() as u32).to_le_bytes());
    for &v in features.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_feature_dump(path: &Path) -> Result<Array2<f64>> {
    let bytes = std::fs::read(path)?;
    let mut r: &[u8] = &bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::ConfigInvalid("feature dump truncated".into()))?;
    if &magic != FEA_MAGIC {
        return Err(Error::ConfigInvalid("feature dump bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| Error::ConfigInvalid("truncated".into()))?;
    let rows = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(|_| Error::ConfigInvalid("truncated".into()))?;
    let cols = u32::from_le_bytes(u32buf) as usize;
    let mut values = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::ConfigInvalid("truncated".into()))?;
            values[(i, j)] = f32::from_le_bytes(b) as f64;
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_encodings_have_similarity_one() {
        let e = array![[0.3, 0.4], [0.3, 0.4], [0.3, 0.4]];
        assert!((self_similarity(&e).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_encodings_have_similarity_zero() {
        let e = array![[1.0, 0.0], [0.0, 2.0]];
        assert!(self_similarity(&e).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let e = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-1.0..1.0));
        let got = self_similarity(&e).unwrap();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    continue;
                }
                let ni: f64 = e.row(i).mapv(|v| v * v).sum().sqrt();
                let nj: f64 = e.row(j).mapv(|v| v * v).sum().sqrt();
                total += e.row(i).dot(&e.row(j)) / (ni * nj);
                pairs += 1;
            }
        }
        assert!((got - total / pairs as f64).abs() < 1e-6);
    }

    #[test]
    fn invariant_to_permutation_and_positive_rescaling() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let e = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));
        let s0 = self_similarity(&e).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let ep = Array2::from_shape_fn((5, 4), |(i, j)| e[(perm[i], j)]);
        assert!((self_similarity(&ep).unwrap() - s0).abs() < 1e-12);
        let mut es = e.clone();
        for (i, mut row) in es.rows_mut().into_iter().enumerate() {
            let c = 1.0 + i as f64;
            row.mapv_inplace(|v| v * c);
        }
        assert!((self_similarity(&es).unwrap() - s0).abs() < 1e-10);
    }

    #[test]
    fn errors_on_degenerate_inputs() {
        assert!(matches!(
            self_similarity(&Array2::zeros((1, 3))),
            Err(Error::TooFewContexts(1))
        ));
        let mut e = Array2::zeros((3, 3));
        e[(0, 0)] = 1.0;
        e[(1, 1)] = 1.0;
        assert!(matches!(self_similarity(&e), Err(Error::ZeroVector)));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = array![
            [1.0, -0.333333333333333314829616256247390992939472198486328125],
            [0.1234567890123456789, 1.0]
        ];
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn feature_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fea");
        let f = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37) as f32 as f64);
        write_feature_dump(&path, &f).unwrap();
        let back = read_feature_dump(&path).unwrap();
        assert_eq!(f, back);
    }
}

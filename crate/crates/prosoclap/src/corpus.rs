//! Corpus ingestion, the token-occurrence inverted index, and same-token
//! contrastive batch sampling.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{clip_token_segment, read_mel_cache, MelSpectrogram, SpeechSegment, TokenBoundary, TokenKind};
use crate::error::{Error, Result};
use crate::text::{Lexicon, TextFrontend, TextItem};

/// Token scale of an index, batch or training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Scale {
    #[serde(rename = "ph")]
    #[value(name = "ph")]
    Phoneme,
    #[serde(rename = "word")]
    #[value(name = "word")]
    Word,
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scale::Phoneme => write!(f, "ph"),
            Scale::Word => write!(f, "word"),
        }
    }
}

/// One manifest row; see the JSON-lines schema in the module docs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub text: String,
    pub mel_path: String,
    pub phones: Vec<String>,
    pub ph2word: Vec<usize>,
    pub words: Vec<String>,
    pub ph_frames: Vec<[usize; 2]>,
    pub word_frames: Vec<[usize; 2]>,
    pub word_pitch_hz: Vec<f64>,
    pub word_dur_sec: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub text_item: TextItem,
    pub phones: Vec<String>,
    pub mel_ref: PathBuf,
    pub ph_boundaries: Vec<TokenBoundary>,
    pub word_boundaries: Vec<TokenBoundary>,
    pub word_pitch_hz: Vec<f64>,
    pub word_dur_sec: Vec<f64>,
}

impl Utterance {
    pub fn boundaries(&self, scale: Scale) -> &[TokenBoundary] {
        match scale {
            Scale::Phoneme => &self.ph_boundaries,
            Scale::Word => &self.word_boundaries,
        }
    }

    pub fn token_symbol(&self, scale: Scale, position: usize) -> Option<&str> {
        match scale {
            Scale::Phoneme => self.phones.get(position).map(String::as_str),
            Scale::Word => self.text_item.words.get(position).map(String::as_str),
        }
    }

    pub fn token_count(&self, scale: Scale) -> usize {
        match scale {
            Scale::Phoneme => self.phones.len(),
            Scale::Word => self.text_item.words.len(),
        }
    }
}

pub struct IngestStats {
    pub accepted: usize,
    pub rejected: usize,
    pub failures: Vec<(usize, String)>,
}

pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub frontend: TextFrontend,
    pub stats: IngestStats,
}

impl Corpus {
    /// Read a JSON-lines manifest and build the corpus. Invalid rows are
    /// reported per line and skipped; only an entirely invalid manifest is
    /// fatal. The BPE table is trained on the manifest texts.
    pub fn ingest(manifest: &Path, lexicon: Lexicon, bpe_vocab_size: usize) -> Result<Self> {
        let (rows, failures) = read_rows(manifest)?;
        let texts: Vec<String> = rows.iter().map(|(_, r)| r.text.clone()).collect();
        let extra_phones: Vec<String> = rows
            .iter()
            .flat_map(|(_, r)| r.phones.iter().cloned())
            .collect();
        let frontend = TextFrontend::from_texts(&texts, lexicon, bpe_vocab_size, &extra_phones)?;
        Self::assemble(manifest, frontend, rows, failures)
    }

    /// Ingest against an existing frontend (e.g. the one embedded in a
    /// checkpoint) so token ids match the trained model.
    pub fn ingest_with_frontend(manifest: &Path, frontend: TextFrontend) -> Result<Self> {
        let (rows, failures) = read_rows(manifest)?;
        Self::assemble(manifest, frontend, rows, failures)
    }

    fn assemble(
        manifest: &Path,
        frontend: TextFrontend,
        rows: Vec<(usize, ManifestRow)>,
        mut failures: Vec<(usize, String)>,
    ) -> Result<Self> {
        let manifest_dir = manifest.parent().unwrap_or(Path::new("."));
        let mut utterances = Vec::new();
        for (lineno, row) in rows {
            match build_utterance(&frontend, &row, manifest_dir) {
                Ok(u) => utterances.push(u),
                Err(e) => failures.push((lineno, e.to_string())),
            }
        }
        if utterances.is_empty() {
            return Err(Error::AllRowsInvalid(failures.len()));
        }
        let stats = IngestStats {
            accepted: utterances.len(),
            rejected: failures.len(),
            failures,
        };
        Ok(Corpus { utterances, frontend, stats })
    }

    /// Deterministic train/eval split: every 10th utterance (by manifest
    /// order) is held out.
    pub fn split_indices(&self, eval_every: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for i in 0..self.utterances.len() {
            if eval_every > 0 && i % eval_every == 0 {
                eval.push(i);
            } else {
                train.push(i);
            }
        }
        (train, eval)
    }
}

type ParsedRows = (Vec<(usize, ManifestRow)>, Vec<(usize, String)>);

fn read_rows(manifest: &Path) -> Result<ParsedRows> {
    let file = std::fs::File::open(manifest)
        .map_err(|e| Error::ManifestUnreadable(format!("{}: {e}", manifest.display())))?;
    let mut rows: Vec<(usize, ManifestRow)> = Vec::new();
    let mut failures: Vec<(usize, String)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::ManifestUnreadable(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestRow>(&line) {
            Ok(row) => rows.push((lineno + 1, row)),
            Err(e) => failures.push((lineno + 1, format!("parse: {e}"))),
        }
    }
    if rows.is_empty() {
        return Err(Error::AllRowsInvalid(failures.len()));
    }
    Ok((rows, failures))
}

fn build_utterance(frontend: &TextFrontend, row: &ManifestRow, base: &Path) -> Result<Utterance> {
    if row.phones.len() != row.ph2word.len() || row.phones.len() != row.ph_frames.len() {
        return Err(Error::ConfigInvalid(format!(
            "row {}: phone-level lengths disagree",
            row.id
        )));
    }
    if row.words.len() != row.word_frames.len()
        || row.words.len() != row.word_pitch_hz.len()
        || row.words.len() != row.word_dur_sec.len()
    {
        return Err(Error::ConfigInvalid(format!(
            "row {}: word-level lengths disagree",
            row.id
        )));
    }
    let text_item = frontend.item_from_manifest(&row.text, &row.phones, &row.ph2word, &row.words)?;
    let mk_boundaries = |symbols: &[String], frames: &[[usize; 2]], kind: TokenKind| -> Result<Vec<TokenBoundary>> {
        symbols
            .iter()
            .zip(frames)
            .map(|(sym, fr)| {
                if fr[0] >= fr[1] {
                    return Err(Error::InvalidBoundary { start: fr[0], end: fr[1], frames: 0 });
                }
                Ok(TokenBoundary {
                    token_kind: kind,
                    token_symbol: sym.clone(),
                    start_frame: fr[0],
                    end_frame: fr[1],
                })
            })
            .collect()
    };
    let mel_ref = if Path::new(&row.mel_path).is_absolute() {
        PathBuf::from(&row.mel_path)
    } else {
        base.join(&row.mel_path)
    };
    if !mel_ref.exists() {
        return Err(Error::ConfigInvalid(format!(
            "row {}: mel cache {} missing",
            row.id,
            mel_ref.display()
        )));
    }
    Ok(Utterance {
        id: row.id.clone(),
        text: row.text.clone(),
        text_item,
        phones: row.phones.clone(),
        mel_ref,
        ph_boundaries: mk_boundaries(&row.phones, &row.ph_frames, TokenKind::Phoneme)?,
        word_boundaries: mk_boundaries(&row.words, &row.word_frames, TokenKind::Word)?,
        word_pitch_hz: row.word_pitch_hz.clone(),
        word_dur_sec: row.word_dur_sec.clone(),
    })
}

/// Inverted index: token symbol -> occurrences at one scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenIndex {
    pub scale: Scale,
    pub min_occurrences: usize,
    /// Occurrences as (utterance index, token position), sorted by
    /// (utterance id, position) and duplicate-free.
    pub entries: BTreeMap<String, Vec<(usize, usize)>>,
}

impl TokenIndex {
    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn total_occurrences(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }
}

/// Build the index over a subset of utterances (`members`), keeping tokens
/// with at least `min_occurrences` occurrences.
pub fn build_token_index(
    corpus: &Corpus,
    members: &[usize],
    scale: Scale,
    min_occurrences: usize,
) -> Result<TokenIndex> {
    let mut entries: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for &u_idx in members {
        let utt = &corpus.utterances[u_idx];
        for (pos, b) in utt.boundaries(scale).iter().enumerate() {
            entries
                .entry(b.token_symbol.clone())
                .or_default()
                .push((u_idx, pos));
        }
    }
    for occs in entries.values_mut() {
        occs.sort_by(|a, b| {
            let ida = &corpus.utterances[a.0].id;
            let idb = &corpus.utterances[b.0].id;
            ida.cmp(idb).then(a.1.cmp(&b.1))
        });
        occs.dedup();
    }
    entries.retain(|_, occs| occs.len() >= min_occurrences);
    if entries.is_empty() {
        return Err(Error::NoEligibleTokens { min_occurrences });
    }
    Ok(TokenIndex { scale, min_occurrences, entries })
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub utterance: usize,
    pub text_item: TextItem,
    pub segment: SpeechSegment,
    pub token_position: usize,
}

#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub scale: Scale,
    pub token_symbol: String,
    pub items: Vec<BatchItem>,
    /// Fraction of slots filled by repeated occurrences (with-replacement
    /// fallback for mid-frequency tokens).
    pub duplication_rate: f64,
}

/// Lazily loaded mel caches, keyed by utterance index.
#[derive(Default)]
pub struct MelStore {
    loaded: HashMap<usize, MelSpectrogram>,
}

impl MelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, corpus: &Corpus, utt: usize) -> Result<&MelSpectrogram> {
        if !self.loaded.contains_key(&utt) {
            let mel = read_mel_cache(&corpus.utterances[utt].mel_ref)?;
            self.loaded.insert(utt, mel);
        }
        Ok(&self.loaded[&utt])
    }
}

/// Pick a token (uniform over token types unless given) and its occurrences:
/// without replacement when the token has at least N occurrences, otherwise
/// every distinct occurrence plus uniform redraws.
pub fn sample_token_occurrences(
    index: &TokenIndex,
    n: usize,
    rng: &mut ChaCha20Rng,
    token_symbol: Option<&str>,
) -> Result<(String, Vec<(usize, usize)>, f64)> {
    let token = match token_symbol {
        Some(t) => {
            if !index.entries.contains_key(t) {
                return Err(Error::TokenNotIndexed(t.to_string()));
            }
            t.to_string()
        }
        None => {
            let keys: Vec<&String> = index.entries.keys().collect();
            keys[rng.gen_range(0..keys.len())].clone()
        }
    };
    let occs = &index.entries[&token];
    let mut distinct: Vec<(usize, usize)> = occs.clone();
    if distinct.len() < 2 {
        return Err(Error::TokenDegenerate(token));
    }
    let mut picked = Vec::with_capacity(n);
    let mut dup_slots = 0usize;
    if distinct.len() >= n {
        distinct.shuffle(rng);
        picked.extend_from_slice(&distinct[..n]);
    } else {
        distinct.shuffle(rng);
        picked.extend_from_slice(&distinct);
        while picked.len() < n {
            picked.push(occs[rng.gen_range(0..occs.len())]);
            dup_slots += 1;
        }
    }
    Ok((token, picked, dup_slots as f64 / n as f64))
}

/// Assemble a full contrastive batch: same-token occurrences plus their
/// clipped speech segments at the index's scale.
pub fn sample_contrastive_batch(
    index: &TokenIndex,
    corpus: &Corpus,
    mels: &mut MelStore,
    n: usize,
    segment_len: usize,
    log_floor: f64,
    rng: &mut ChaCha20Rng,
    token_symbol: Option<&str>,
) -> Result<ContrastiveBatch> {
    let (token, picked, duplication_rate) = sample_token_occurrences(index, n, rng, token_symbol)?;
    let mut items = Vec::with_capacity(n);
    for (utt_idx, pos) in picked {
        let utt = &corpus.utterances[utt_idx];
        let boundary = &utt.boundaries(index.scale)[pos];
        let mel = mels.get(corpus, utt_idx)?;
        let segment = clip_token_segment(mel, boundary, segment_len, log_floor)?;
        items.push(BatchItem {
            utterance: utt_idx,
            text_item: corpus.utterances[utt_idx].text_item.clone(),
            segment,
            token_position: pos,
        });
    }
    Ok(ContrastiveBatch { scale: index.scale, token_symbol: token, items, duplication_rate })
}

//! Byte pair encoding: merge-table training and greedy encoding.
//!
//! Merges never cross word boundaries, so every BPE unit has a well-defined
//! owning word for word pooling.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lexicon::normalize_words;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BpeTable {
    /// Merges in priority order (earlier = applied first).
    pub merges: Vec<(String, String)>,
    /// True when the corpus ran out of pairs before reaching the requested
    /// vocabulary size.
    pub truncated: bool,
}

impl BpeTable {
    /// One merge per line, `left<SPACE>right`, in priority order.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut merges = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once(' ').ok_or_else(|| {
                Error::ConfigInvalid(format!("merge line missing space: {line:?}"))
            })?;
            merges.push((l.to_string(), r.to_string()));
        }
        Ok(BpeTable { merges, truncated: false })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for (l, r) in &self.merges {
            writeln!(f, "{l} {r}")?;
        }
        Ok(())
    }

    /// All unit symbols the table can produce: base characters observed in the
    /// merges plus every merge output.
    pub fn unit_symbols(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (l, r) in &self.merges {
            out.push(l.clone());
            out.push(r.clone());
            out.push(format!("{l}{r}"));
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Train a merge table to grow the unit vocabulary from the base characters up
/// to `vocab_size`. Ties between equally frequent pairs break lexicographically.
pub fn train_bpe(corpus_texts: &[String], vocab_size: usize) -> Result<BpeTable> {
    // word -> count, words as symbol sequences
    let mut word_counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for text in corpus_texts {
        for word in normalize_words(text) {
            let symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
            *word_counts.entry(symbols).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut base: Vec<String> = word_counts.keys().flatten().cloned().collect();
    base.sort();
    base.dedup();
    if vocab_size <= base.len() {
        return Err(Error::ConfigInvalid(format!(
            "bpe vocab size {vocab_size} must exceed base character count {}",
            base.len()
        )));
    }
    let n_merges = vocab_size - base.len();

    let mut merges = Vec::new();
    let mut truncated = false;
    for _ in 0..n_merges {
        let mut pair_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (word, &count) in &word_counts {
            for pair in word.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += count;
            }
        }
        // BTreeMap iterates pairs in ascending lexicographic order, so keeping
        // the first strictly-greater count selects the smallest pair on ties.
        let best = pair_counts
            .iter()
            .fold(None::<(&(String, String), usize)>, |acc, (p, &c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((p, c)),
            });
        let Some((pair, _)) = best else {
            truncated = true;
            break;
        };
        let pair = pair.clone();
        let merged = format!("{}{}", pair.0, pair.1);
        let mut next: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (word, count) in word_counts {
            let mut out = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(word[i].clone());
                    i += 1;
                }
            }
            *next.entry(out).or_insert(0) += count;
        }
        word_counts = next;
        merges.push(pair);
    }
    Ok(BpeTable { merges, truncated })
}

/// Encode one word by repeatedly applying the highest-priority applicable
/// merge to all of its occurrences.
pub fn encode_word(word: &str, table: &BpeTable) -> Vec<String> {
    let mut units: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    let priority: BTreeMap<(String, String), usize> = table
        .merges
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();
    loop {
        let mut best: Option<usize> = None;
        for pair in units.windows(2) {
            if let Some(&p) = priority.get(&(pair[0].clone(), pair[1].clone())) {
                best = Some(best.map_or(p, |b: usize| b.min(p)));
            }
        }
        let Some(p) = best else { break };
        let (l, r) = &table.merges[p];
        let merged = format!("{l}{r}");
        let mut out = Vec::with_capacity(units.len());
        let mut i = 0;
        while i < units.len() {
            if i + 1 < units.len() && &units[i] == l && &units[i + 1] == r {
                out.push(merged.clone());
                i += 2;
            } else {
                out.push(units[i].clone());
                i += 1;
            }
        }
        units = out;
    }
    units
}

/// Encode normalized text into per-word BPE units with the owning word of each
/// unit. No unit spans a word boundary.
pub fn bpe_encode(text: &str, table: &BpeTable) -> Result<(Vec<String>, Vec<usize>)> {
    let words = normalize_words(text);
    if words.is_empty() {
        return Err(Error::EmptyText);
    }
    let mut units = Vec::new();
    let mut bpe2word = Vec::new();
    for (w_idx, word) in words.iter().enumerate() {
        for u in encode_word(word, table) {
            units.push(u);
            bpe2word.push(w_idx);
        }
    }
    Ok((units, bpe2word))
}

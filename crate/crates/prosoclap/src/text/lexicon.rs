//! Pronunciation lexicon and dictionary-lookup G2P with a letter-to-sound
//! fallback.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized word sequence: punctuation stripped, lowercased,
/// whitespace-delimited.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(|c| c.to_lowercase())
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, phonemes: Vec<String>) {
        self.entries.insert(word.to_lowercase(), phonemes);
    }

    pub fn get(&self, word: &str) -> Option<&Vec<String>> {
        self.entries.get(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn all_phonemes(&self) -> impl Iterator<Item = &String> {
        self.entries.values().flatten()
    }

    /// One entry per line: `WORD<TAB>PH1 PH2 ...`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lex = Lexicon::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (word, phones) = line.split_once('\t').ok_or_else(|| {
                Error::ConfigInvalid(format!("lexicon line missing tab: {line:?}"))
            })?;
            lex.insert(word, phones.split_whitespace().map(str::to_string).collect());
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for (w, ph) in &self.entries {
            writeln!(f, "{w}\t{}", ph.join(" "))?;
        }
        Ok(())
    }

    /// Phonemize normalized text: lexicon lookup word by word, falling back to
    /// letter-to-sound for out-of-dictionary words.
    pub fn phonemize(&self, text: &str) -> Result<(Vec<String>, Vec<usize>)> {
        let words = normalize_words(text);
        if words.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut phonemes = Vec::new();
        let mut ph2word = Vec::new();
        for (w_idx, word) in words.iter().enumerate() {
            let phones = match self.get(word) {
                Some(p) => p.clone(),
                None => letter_to_sound(word)?,
            };
            for p in phones {
                phonemes.push(p);
                ph2word.push(w_idx);
            }
        }
        Ok((phonemes, ph2word))
    }
}

/// Per-letter fallback pronunciation. Any alphabetic word decomposes; words
/// with other characters are unpronounceable.
pub fn letter_to_sound(word: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for c in word.chars() {
        let ph = match c.to_ascii_lowercase() {
            'a' => "AE",
            'b' => "B",
            'c' => "K",
            'd' => "D",
            'e' => "EH",
            'f' => "F",
            'g' => "G",
            'h' => "HH",
            'i' => "IH",
            'j' => "JH",
            'k' => "K",
            'l' => "L",
            'm' => "M",
            'n' => "N",
            'o' => "OW",
            'p' => "P",
            'q' => "K",
            'r' => "R",
            's' => "S",
            't' => "T",
            'u' => "UH",
            'v' => "V",
            'w' => "W",
            'x' => "S",
            'y' => "Y",
            'z' => "Z",
            _ => return Err(Error::UnpronounceableWord(word.to_string())),
        };
        out.push(ph.to_string());
    }
    if out.is_empty() {
        return Err(Error::UnpronounceableWord(word.to_string()));
    }
    Ok(out)
}

/// Every phoneme the fallback can emit; these always join the phoneme vocab.
pub fn fallback_phoneme_set() -> Vec<String> {
    [
        "AE", "B", "K", "D", "EH", "F", "G", "HH", "IH", "JH", "L", "M", "N", "OW", "P", "R", "S",
        "T", "UH", "V", "W", "Y", "Z",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

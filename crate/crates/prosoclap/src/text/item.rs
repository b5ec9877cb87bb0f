//! One utterance's dual token streams and alignment maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextItem {
    pub phonemes: Vec<u32>,
    pub bpes: Vec<u32>,
    pub words: Vec<String>,
    pub ph2word: Vec<usize>,
    pub bpe2word: Vec<usize>,
}

impl TextItem {
    pub fn validate(&self) -> Result<()> {
        if self.phonemes.is_empty() || self.words.is_empty() {
            return Err(Error::EmptySequence);
        }
        if self.ph2word.len() != self.phonemes.len() || self.bpe2word.len() != self.bpes.len() {
            return Err(Error::ConfigInvalid(
                "alignment length does not match token stream".into(),
            ));
        }
        check_alignment(&self.ph2word, self.words.len())?;
        check_alignment(&self.bpe2word, self.words.len())?;
        Ok(())
    }
}

/// Non-decreasing and covering exactly 0..n_words-1.
fn check_alignment(map: &[usize], n_words: usize) -> Result<()> {
    if map.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut prev = 0usize;
    for &w in map {
        if w < prev {
            return Err(Error::ConfigInvalid("alignment map decreases".into()));
        }
        if w > prev + 1 && w != prev {
            // jumping over a word leaves it unit-less
            return Err(Error::AlignmentGap(prev + 1));
        }
        prev = w;
    }
    if map[0] != 0 {
        return Err(Error::AlignmentGap(0));
    }
    if prev != n_words - 1 {
        return Err(Error::AlignmentGap(prev + 1));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item() -> TextItem {
        TextItem {
            phonemes: vec![2, 3, 4, 5],
            bpes: vec![2, 3, 4],
            words: vec!["go".into(), "up".into()],
            ph2word: vec![0, 0, 1, 1],
            bpe2word: vec![0, 0, 1],
        }
    }

    #[test]
    fn valid_item_passes() {
        item().validate().unwrap();
    }

    #[test]
    fn decreasing_alignment_fails() {
        let mut it = item();
        it.ph2word = vec![0, 1, 0, 1];
        assert!(it.validate().is_err());
    }

    #[test]
    fn word_without_units_fails() {
        let mut it = item();
        it.words.push("extra".into());
        assert!(matches!(it.validate(), Err(Error::AlignmentGap(_))));
    }

    #[test]
    fn skipped_word_fails() {
        let mut it = item();
        it.words = vec!["a".into(), "b".into(), "c".into()];
        it.ph2word = vec![0, 0, 2, 2];
        assert!(matches!(it.validate(), Err(Error::AlignmentGap(1))));
    }
}

//! Text frontend: dual token streams (phoneme + BPE) and word alignment maps.

pub mod bpe;
pub mod item;
pub mod lexicon;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bpe::{bpe_encode, train_bpe, BpeTable};
pub use item::TextItem;
pub use lexicon::{letter_to_sound, normalize_words, Lexicon};
pub use vocab::{Vocab, PAD_ID, UNK_ID};

/// Everything needed to turn raw text into a [`TextItem`]. Immutable after
/// construction; all methods are pure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextFrontend {
    pub lexicon: Lexicon,
    pub bpe: BpeTable,
    pub ph_vocab: Vocab,
    pub bpe_vocab: Vocab,
}

impl TextFrontend {
    /// Build from training texts: trains the merge table and derives both
    /// vocabularies. `extra_phonemes` admits symbols observed outside the
    /// lexicon (e.g. a manifest's phone inventory).
    pub fn from_texts(
        texts: &[String],
        lexicon: Lexicon,
        bpe_vocab_size: usize,
        extra_phonemes: &[String],
    ) -> Result<Self> {
        let bpe = train_bpe(texts, bpe_vocab_size)?;
        Ok(Self::from_parts(lexicon, bpe, extra_phonemes))
    }

    pub fn from_parts(lexicon: Lexicon, bpe: BpeTable, extra_phonemes: &[String]) -> Self {
        let mut ph_symbols: Vec<String> = lexicon.all_phonemes().cloned().collect();
        ph_symbols.extend(lexicon::fallback_phoneme_set());
        ph_symbols.extend(extra_phonemes.iter().cloned());
        let ph_vocab = Vocab::from_symbols(ph_symbols);

        let mut bpe_symbols = bpe.unit_symbols();
        // base characters of anything the lexicon knows, plus a-z, so unmerged
        // words map onto real ids instead of UNK
        for w in lexicon.words() {
            bpe_symbols.extend(w.chars().map(|c| c.to_string()));
        }
        for c in b'a'..=b'z' {
            bpe_symbols.push((c as char).to_string());
        }
        let bpe_vocab = Vocab::from_symbols(bpe_symbols);
        Self { lexicon, bpe, ph_vocab, bpe_vocab }
    }

    pub fn phonemize(&self, text: &str) -> Result<(Vec<String>, Vec<usize>)> {
        self.lexicon.phonemize(text)
    }

    pub fn bpe_encode(&self, text: &str) -> Result<(Vec<String>, Vec<usize>)> {
        bpe_encode(text, &self.bpe)
    }

    /// Full frontend pass: phonemize + BPE encode + id mapping.
    pub fn build_text_item(&self, text: &str) -> Result<TextItem> {
        let (phones, ph2word) = self.phonemize(text)?;
        let (units, bpe2word) = self.bpe_encode(text)?;
        let words = normalize_words(text);
        let item = TextItem {
            phonemes: phones.iter().map(|p| self.ph_vocab.id(p)).collect(),
            bpes: units.iter().map(|u| self.bpe_vocab.id(u)).collect(),
            words,
            ph2word,
            bpe2word,
        };
        item.validate()?;
        Ok(item)
    }

    /// Ingestion path: phones and word segmentation come from a manifest row,
    /// BPE units are computed here. The row's words must match this frontend's
    /// normalization of the text.
    pub fn item_from_manifest(
        &self,
        text: &str,
        phones: &[String],
        ph2word: &[usize],
        words: &[String],
    ) -> Result<TextItem> {
        let norm = normalize_words(text);
        if norm != words {
            return Err(Error::ConfigInvalid(format!(
                "manifest words {:?} do not match normalized text {:?}",
                words, norm
            )));
        }
        let (units, bpe2word) = self.bpe_encode(text)?;
        let item = TextItem {
            phonemes: phones.iter().map(|p| self.ph_vocab.id(p)).collect(),
            bpes: units.iter().map(|u| self.bpe_vocab.id(u)).collect(),
            words: words.to_vec(),
            ph2word: ph2word.to_vec(),
            bpe2word,
        };
        item.validate()?;
        Ok(item)
    }

    /// Restore the derived indexes after deserialization.
    pub fn rebuild_indexes(&mut self) {
        self.ph_vocab.rebuild_index();
        self.bpe_vocab.rebuild_index();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frontend() -> TextFrontend {
        let mut lex = Lexicon::new();
        lex.insert("go", vec!["G".into(), "OW".into()]);
        lex.insert("up", vec!["AH".into(), "P".into()]);
        let texts = vec!["go up".to_string(), "go go up".to_string()];
        TextFrontend::from_texts(&texts, lex, 8, &[]).unwrap()
    }

    #[test]
    fn build_text_item_satisfies_invariants() {
        let fe = frontend();
        let item = fe.build_text_item("go up").unwrap();
        assert_eq!(item.words, vec!["go", "up"]);
        item.validate().unwrap();
        assert_eq!(item.ph2word, vec![0, 0, 1, 1]);
    }

    #[test]
    fn single_word_alignments_are_zero() {
        let fe = frontend();
        let item = fe.build_text_item("go").unwrap();
        assert!(item.ph2word.iter().all(|&w| w == 0));
        assert!(item.bpe2word.iter().all(|&w| w == 0));
    }

    #[test]
    fn ten_word_sentence_alignment() {
        let fe = frontend();
        let sentence = "go up go up go up go up go up";
        let (_, p2w) = fe.phonemize(sentence).unwrap();
        assert!(p2w.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*p2w.last().unwrap(), 9);
    }

    #[test]
    fn manifest_mismatch_rejected() {
        let fe = frontend();
        let err = fe.item_from_manifest(
            "go up",
            &["G".into(), "OW".into()],
            &[0, 0],
            &["different".into()],
        );
        assert!(err.is_err());
    }
}

//! Deterministic synthetic corpus generator.
//!
//! Context provably determines each token's prosody pattern: the word
//! neighboring a token selects a contour shape family (hash mod class count)
//! plus a fine amplitude/offset modulation (full hash), and the class also
//! scales phoneme durations. A contrastive learner must read the neighboring
//! word out of the text to place a token's segment, which gives retrieval
//! accuracy a known, near-1 ceiling. The vocabulary contains homophone pairs
//! (same phonemes, different spelling) so the BPE stream carries context the
//! phoneme stream cannot.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_mel_cache, MelSpectrogram};
use crate::corpus::ManifestRow;
use crate::error::{Error, Result};
use crate::text::Lexicon;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Word list; empty selects the built-in 50-word vocabulary.
    pub vocab: Vec<String>,
    /// Pronunciations; empty selects the built-in lexicon for `vocab`.
    pub lexicon: BTreeMap<String, Vec<String>>,
    pub n_utterances: usize,
    pub seed: u64,
    pub n_classes: usize,
    /// Noise in log-mel units, truncated at four sigma.
    pub noise_sigma: f64,
    pub mel_bins: usize,
    pub frames_per_phoneme: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub sample_rate: f32,
    pub hop: u32,
    pub log_floor_energy: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab: Vec::new(),
            lexicon: BTreeMap::new(),
            n_utterances: 2000,
            seed: 0,
            n_classes: 4,
            noise_sigma: 0.1,
            mel_bins: 40,
            frames_per_phoneme: 8,
            min_words: 2,
            max_words: 2,
            sample_rate: 16000.0,
            hop: 256,
            log_floor_energy: 1e-5,
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let spec: SynthSpec = serde_json::from_slice(&bytes)
            .map_err(|e| Error::SpecInvalid(format!("{}: {e}", path.display())))?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.n_utterances == 0 {
            return Err(Error::SpecInvalid("n_utterances must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::SpecInvalid("n_classes must be >= 2".into()));
        }
        if self.min_words < 2 || self.max_words < self.min_words {
            return Err(Error::SpecInvalid("need 2 <= min_words <= max_words".into()));
        }
        if self.mel_bins < 12 {
            return Err(Error::SpecInvalid("mel_bins must be >= 12".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::SpecInvalid("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Resolved (vocab, lexicon) pair.
    fn resolve_words(&self) -> Result<(Vec<String>, Lexicon)> {
        let (vocab, entries) = if self.vocab.is_empty() {
            builtin_vocab()
        } else {
            let lex = if self.lexicon.is_empty() {
                return Err(Error::SpecInvalid("custom vocab requires a lexicon".into()));
            } else {
                self.lexicon.clone()
            };
            (self.vocab.clone(), lex)
        };
        let mut lexicon = Lexicon::new();
        for w in &vocab {
            let phones = entries
                .get(w)
                .ok_or_else(|| Error::SpecInvalid(format!("word {w:?} missing from lexicon")))?;
            if phones.is_empty() {
                return Err(Error::SpecInvalid(format!("word {w:?} has no phonemes")));
            }
            lexicon.insert(w, phones.clone());
        }
        Ok((vocab, lexicon))
    }
}

/// 50 words; four homophone pairs share pronunciations.
pub fn builtin_vocab() -> (Vec<String>, BTreeMap<String, Vec<String>>) {
    let raw: &[(&str, &str)] = &[
        ("go", "G OW"),
        ("up", "AH P"),
        ("down", "D AW N"),
        ("red", "R EH D"),
        ("blue", "B L UW"),
        ("green", "G R IY N"),
        ("gold", "G OW L D"),
        ("lake", "L EY K"),
        ("tree", "T R IY"),
        ("bird", "B ER D"),
        ("stone", "S T OW N"),
        ("wind", "W IH N D"),
        ("rain", "R EY N"),
        ("cloud", "K L AW D"),
        ("fire", "F AY ER"),
        ("light", "L AY T"),
        ("dark", "D AA R K"),
        ("moon", "M UW N"),
        ("star", "S T AA R"),
        ("hill", "HH IH L"),
        ("road", "R OW D"),
        ("door", "D AO R"),
        ("bell", "B EH L"),
        ("song", "S AO NG"),
        ("wave", "W EY V"),
        ("leaf", "L IY F"),
        ("snow", "S N OW"),
        ("frost", "F R AO S T"),
        ("king", "K IH NG"),
        ("queen", "K W IY N"),
        ("ship", "SH IH P"),
        ("sail", "S EY L"),
        ("rope", "R OW P"),
        ("sand", "S AE N D"),
        ("shell", "SH EH L"),
        ("wolf", "W UH L F"),
        ("bear", "B EH R"),
        ("fox", "F AA K S"),
        ("deer", "D IH R"),
        ("owl", "AW L"),
        ("pine", "P AY N"),
        ("oak", "OW K"),
        // homophone pairs: same phonemes, different spelling
        ("pair", "P EH R"),
        ("pear", "P EH R"),
        ("sun", "S AH N"),
        ("son", "S AH N"),
        ("see", "S IY"),
        ("sea", "S IY"),
        ("night", "N AY T"),
        ("knight", "N AY T"),
    ];
    let vocab: Vec<String> = raw.iter().map(|(w, _)| w.to_string()).collect();
    let lex = raw
        .iter()
        .map(|(w, p)| {
            (
                w.to_string(),
                p.split_whitespace().map(str::to_string).collect(),
            )
        })
        .collect();
    (vocab, lex)
}

/// FNV-1a over bytes; stable across platforms and runs.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// The word driving a token's prosody: the preceding word, or the following
/// one for sentence-initial words.
pub fn context_word(words: &[String], word_idx: usize) -> &str {
    if word_idx > 0 {
        &words[word_idx - 1]
    } else {
        &words[1.min(words.len() - 1)]
    }
}

pub fn context_class(words: &[String], word_idx: usize, n_classes: usize) -> usize {
    (stable_hash(context_word(words, word_idx)) % n_classes as u64) as usize
}

/// Deterministic pattern parameters of one word's tokens.
#[derive(Debug, Clone, Copy)]
pub struct PatternParams {
    pub class: usize,
    /// Contour amplitude in log-mel units.
    pub amplitude: f64,
    /// Mel-row offset of the contour center.
    pub row_offset: i64,
    /// Phoneme duration multiplier.
    pub dur_factor: f64,
    /// Fine modulation in [0, 1) from the context word.
    pub fine: f64,
}

const DUR_FACTORS: [f64; 4] = [0.75, 1.0, 1.25, 1.5];

pub fn pattern_params(words: &[String], word_idx: usize, n_classes: usize) -> PatternParams {
    let ctx = context_word(words, word_idx);
    let class = context_class(words, word_idx, n_classes);
    let unit = |tag: &str| (stable_hash(&format!("{ctx}#{tag}")) % 1009) as f64 / 1009.0;
    let fine = unit("amp");
    let fine_dur = unit("dur");
    let row_offset = (unit("off") * 5.0).floor() as i64 - 2;
    PatternParams {
        class,
        amplitude: 2.5 + 5.0 * fine,
        row_offset,
        dur_factor: DUR_FACTORS[class % 4]
            * (1.0 + 0.25 * (class / 4) as f64)
            * (0.9 + 0.2 * fine_dur),
        fine,
    }
}

/// Mel row the token's energy band sits on.
pub fn band_row(phoneme: &str, mel_bins: usize) -> usize {
    4 + (stable_hash(&format!("{phoneme}#band")) % (mel_bins as u64 - 8)) as usize
}

/// Contour offset (in mel rows) at relative position `t01` within the token,
/// by class: rising, falling, flat, peak; higher classes reuse the shapes at
/// larger swings.
pub fn contour_offset(class: usize, t01: f64) -> f64 {
    let swing = 3.0 * (1.0 + 0.5 * (class / 4) as f64);
    match class % 4 {
        0 => swing * (2.0 * t01 - 1.0),
        1 => swing * (1.0 - 2.0 * t01),
        2 => 0.0,
        _ => swing * (2.0 * (1.0 - (2.0 * t01 - 1.0).abs()) - 1.0),
    }
}

#[derive(Debug, Serialize)]
pub struct SynthReport {
    pub manifest: PathBuf,
    pub lexicon: PathBuf,
    pub mel_dir: PathBuf,
    pub n_utterances: usize,
    pub n_words: usize,
    pub phoneme_inventory: usize,
}

/// Generate the manifest, per-utterance mel caches and the lexicon file.
/// Byte-identical across runs for a fixed spec.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthReport> {
    spec.validate()?;
    let (vocab, lexicon) = spec.resolve_words()?;
    let mel_dir = out_dir.join("mels");
    std::fs::create_dir_all(&mel_dir)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let lexicon_path = out_dir.join("lexicon.txt");
    lexicon.save(&lexicon_path)?;

    let log_floor = spec.log_floor_energy.ln();
    let mut manifest = std::fs::File::create(&manifest_path)?;
    let mut class_cover: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();

    for utt_idx in 0..spec.n_utterances {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(1000 + utt_idx as u64);

        let n_words = rng.gen_range(spec.min_words..=spec.max_words);
        let words: Vec<String> = (0..n_words)
            .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
            .collect();
        let text = words.join(" ");

        let mut phones: Vec<String> = Vec::new();
        let mut ph2word: Vec<usize> = Vec::new();
        let mut ph_frames: Vec<[usize; 2]> = Vec::new();
        let mut word_frames: Vec<[usize; 2]> = Vec::new();
        let mut word_pitch: Vec<f64> = Vec::new();
        let mut word_dur: Vec<f64> = Vec::new();
        struct Patch {
            start: usize,
            dur: usize,
            row: usize,
            params: PatternParams,
        }
        let mut patches: Vec<Patch> = Vec::new();

        let mut at = 0usize;
        for (wi, word) in words.iter().enumerate() {
            let params = pattern_params(&words, wi, spec.n_classes);
            class_cover.entry(word.clone()).or_default().insert(params.class);
            let word_start = at;
            let mut band_sum = 0.0;
            let word_phones = lexicon.get(word).expect("resolved lexicon covers vocab");
            for p in word_phones {
                let dur = ((spec.frames_per_phoneme as f64 * params.dur_factor).round() as usize).max(2);
                let row = band_row(p, spec.mel_bins);
                band_sum += row as f64;
                phones.push(p.clone());
                ph2word.push(wi);
                ph_frames.push([at, at + dur]);
                patches.push(Patch { start: at, dur, row, params });
                at += dur;
            }
            word_frames.push([word_start, at]);
            let mean_band = band_sum / word_phones.len() as f64;
            word_pitch.push(90.0 + 25.0 * params.class as f64 + 40.0 * params.fine + 0.5 * mean_band);
            word_dur.push((at - word_start) as f64 * spec.hop as f64 / spec.sample_rate as f64);
        }
        let total_frames = at;

        let mut values = Array2::from_elem((spec.mel_bins, total_frames), log_floor);
        for patch in &patches {
            for t in 0..patch.dur {
                let t01 = if patch.dur > 1 {
                    t as f64 / (patch.dur - 1) as f64
                } else {
                    0.5
                };
                let center = patch.row as f64
                    + patch.params.row_offset as f64
                    + contour_offset(patch.params.class, t01);
                for f in 0..spec.mel_bins {
                    let d = f as f64 - center;
                    let energy = patch.params.amplitude * (-d * d / (2.0 * 1.5 * 1.5)).exp();
                    values[(f, patch.start + t)] += energy;
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in values.iter_mut() {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                *v += (z * spec.noise_sigma).clamp(-4.0 * spec.noise_sigma, 4.0 * spec.noise_sigma);
            }
        }

        let id = format!("synth{utt_idx:05}");
        let mel_path = format!("mels/{id}.mel");
        write_mel_cache(
            &out_dir.join(&mel_path),
            &MelSpectrogram { values, sample_rate: spec.sample_rate, hop: spec.hop },
        )?;
        let row = ManifestRow {
            id,
            text,
            mel_path,
            phones,
            ph2word,
            words,
            ph_frames,
            word_frames,
            word_pitch_hz: word_pitch,
            word_dur_sec: word_dur,
        };
        writeln!(manifest, "{}", serde_json::to_string(&row)?)?;
    }

    // every word must occur under at least two context classes
    let underrepresented: Vec<&String> = class_cover
        .iter()
        .filter(|(_, classes)| classes.len() < 2)
        .map(|(w, _)| w)
        .collect();
    if !underrepresented.is_empty() {
        return Err(Error::SpecInvalid(format!(
            "tokens observed under fewer than 2 context classes: {underrepresented:?} \
             (increase n_utterances)"
        )));
    }

    let phoneme_inventory: BTreeSet<&String> = lexicon.all_phonemes().collect();
    Ok(SynthReport {
        manifest: manifest_path,
        lexicon: lexicon_path,
        mel_dir,
        n_utterances: spec.n_utterances,
        n_words: vocab.len(),
        phoneme_inventory: phoneme_inventory.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::read_mel_cache;
    use crate::corpus::{Corpus, Scale};

    fn small_spec() -> SynthSpec {
        SynthSpec { n_utterances: 300, seed: 7, ..SynthSpec::default() }
    }

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&small_spec(), d1.path()).unwrap();
        generate(&small_spec(), d2.path()).unwrap();
        let m1 = std::fs::read(d1.path().join("manifest.jsonl")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.jsonl")).unwrap();
        assert_eq!(m1, m2);
        let c1 = std::fs::read(d1.path().join("mels/synth00003.mel")).unwrap();
        let c2 = std::fs::read(d2.path().join("mels/synth00003.mel")).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn every_row_passes_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let report = generate(&small_spec(), dir.path()).unwrap();
        let lex = Lexicon::load(&report.lexicon).unwrap();
        let corpus = Corpus::ingest(&report.manifest, lex, 120).unwrap();
        assert_eq!(corpus.stats.accepted, 300);
        assert_eq!(corpus.stats.rejected, 0);
        for u in &corpus.utterances {
            u.text_item.validate().unwrap();
        }
    }

    #[test]
    fn boundaries_fit_the_mel_caches() {
        let dir = tempfile::tempdir().unwrap();
        let report = generate(&small_spec(), dir.path()).unwrap();
        let lex = Lexicon::load(&report.lexicon).unwrap();
        let corpus = Corpus::ingest(&report.manifest, lex, 120).unwrap();
        for u in corpus.utterances.iter().take(10) {
            let mel = read_mel_cache(&u.mel_ref).unwrap();
            for b in u.boundaries(Scale::Phoneme).iter().chain(u.boundaries(Scale::Word)) {
                assert!(b.end_frame <= mel.frames());
                assert!(b.start_frame < b.end_frame);
            }
        }
    }

    #[test]
    fn centroid_oracle_separates_context_classes() {
        // On clean patterns, nearest-centroid classification of a token's
        // segments by context class must exceed 0.95.
        let spec = SynthSpec { noise_sigma: 0.0, n_utterances: 500, seed: 3, ..SynthSpec::default() };
        let dir = tempfile::tempdir().unwrap();
        let report = generate(&spec, dir.path()).unwrap();
        let lex = Lexicon::load(&report.lexicon).unwrap();
        let corpus = Corpus::ingest(&report.manifest, lex, 120).unwrap();

        // collect word-scale segments by (token, class)
        let seg_len = 64usize;
        let floor = spec.log_floor_energy.ln();
        let mut by_token: BTreeMap<&str, Vec<(usize, Array2<f64>)>> = BTreeMap::new();
        for u in &corpus.utterances {
            let mel = read_mel_cache(&u.mel_ref).unwrap();
            for (wi, b) in u.boundaries(Scale::Word).iter().enumerate() {
                let class = context_class(&u.text_item.words, wi, spec.n_classes);
                let seg = crate::audio::clip_token_segment(&mel, b, seg_len, floor).unwrap();
                by_token
                    .entry(u.token_symbol(Scale::Word, wi).unwrap())
                    .or_default()
                    .push((class, seg.values));
            }
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (_, segs) in by_token.iter().filter(|(_, s)| s.len() >= 8) {
            let mut sums: BTreeMap<usize, (Array2<f64>, usize)> = BTreeMap::new();
            for (class, v) in segs {
                let e = sums
                    .entry(*class)
                    .or_insert_with(|| (Array2::zeros(v.dim()), 0));
                e.0 += v;
                e.1 += 1;
            }
            if sums.len() < 2 {
                continue;
            }
            let centroids: BTreeMap<usize, Array2<f64>> = sums
                .into_iter()
                .map(|(c, (s, n))| (c, s.mapv(|x| x / n as f64)))
                .collect();
            for (class, v) in segs {
                let best = centroids
                    .iter()
                    .map(|(c, cen)| {
                        let d: f64 = (v - cen).iter().map(|x| x * x).sum();
                        (*c, d)
                    })
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap()
                    .0;
                total += 1;
                if best == *class {
                    correct += 1;
                }
            }
        }
        assert!(total > 100, "oracle saw too few segments: {total}");
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "centroid accuracy {acc:.3} on {total} segments");
    }

    #[test]
    fn homophones_share_phonemes() {
        let (_, lex) = builtin_vocab();
        assert_eq!(lex["see"], lex["sea"]);
        assert_eq!(lex["night"], lex["knight"]);
        assert_eq!(lex["pair"], lex["pear"]);
        assert_eq!(lex["sun"], lex["son"]);
        assert_eq!(builtin_vocab().0.len(), 50);
    }

    #[test]
    fn invalid_specs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_classes: 1, ..SynthSpec::default() };
        assert!(matches!(generate(&spec, dir.path()), Err(Error::SpecInvalid(_))));
        let spec = SynthSpec { vocab: vec!["solo".into()], ..SynthSpec::default() };
        assert!(matches!(generate(&spec, dir.path()), Err(Error::SpecInvalid(_))));
    }
}

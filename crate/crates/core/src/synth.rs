//! Synthetic multilingual corpora for desk-scale experiments.
//!
//! An "interlingua" token stream is drawn from a Zipfian unigram
//! distribution. Books belong to genre clusters: the most frequent ranks are
//! shared function words, the remaining ranks are mapped to tokens by a
//! cluster-specific permutation, so clusters differ in their content
//! vocabulary. Each language renames interlingua tokens through its own
//! bijection and then applies local adjacent-swap noise (distortion) and
//! pairwise merge noise (fertility).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Book, BookIndex, CorpusError, LanguageId, ParallelCorpus};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic corpus spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub num_languages: usize,
    pub num_books: usize,
    pub lines_per_book: usize,
    pub vocabulary_size: usize,
    pub zipf_exponent: f64,
    pub genre_clusters: usize,
    /// Adjacent-swap probability per language; a single value applies to
    /// every language, otherwise one value per language.
    pub permutation_noise: Vec<f64>,
    /// Probability that a given adjacent token pair is written as one word
    /// in a language; same broadcasting as `permutation_noise`.
    pub merge_noise: Vec<f64>,
    /// Fraction of the most frequent ranks shared by every genre cluster.
    pub shared_fraction: f64,
    pub min_sentence_length: usize,
    pub max_sentence_length: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_languages: 10,
            num_books: 20,
            lines_per_book: 200,
            vocabulary_size: 2000,
            zipf_exponent: 1.0,
            genre_clusters: 2,
            permutation_noise: vec![0.0],
            merge_noise: vec![0.0],
            shared_fraction: 0.05,
            min_sentence_length: 6,
            max_sentence_length: 12,
            rng_seed: 0,
        }
    }
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::SpecInvalid(msg.into())
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("num_languages", self.num_languages),
            ("num_books", self.num_books),
            ("lines_per_book", self.lines_per_book),
            ("vocabulary_size", self.vocabulary_size),
            ("genre_clusters", self.genre_clusters),
            ("min_sentence_length", self.min_sentence_length),
        ] {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.genre_clusters > self.num_books {
            return Err(invalid("more genre clusters than books"));
        }
        if self.max_sentence_length < self.min_sentence_length {
            return Err(invalid("max_sentence_length below min_sentence_length"));
        }
        if self.max_sentence_length > self.vocabulary_size {
            return Err(invalid(
                "sentences longer than the vocabulary cannot hold distinct tokens",
            ));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(invalid("zipf_exponent must be a finite number ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(invalid("shared_fraction must lie in [0, 1]"));
        }
        for (name, rates) in [
            ("permutation_noise", &self.permutation_noise),
            ("merge_noise", &self.merge_noise),
        ] {
            if rates.len() != 1 && rates.len() != self.num_languages {
                return Err(invalid(format!(
                    "{name} needs 1 or {} values, got {}",
                    self.num_languages,
                    rates.len()
                )));
            }
            if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(invalid(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn rate(rates: &[f64], k: usize) -> f64 {
        if rates.len() == 1 {
            rates[0]
        } else {
            rates[k]
        }
    }

    pub fn language_codes(&self) -> Vec<LanguageId> {
        (0..self.num_languages)
            .map(|k| LanguageId::new(&format!("l{k:02}")).expect("valid code"))
            .collect()
    }

    /// Genre cluster of each book: contiguous blocks of books.
    pub fn book_clusters(&self) -> Vec<usize> {
        (0..self.num_books)
            .map(|b| b * self.genre_clusters / self.num_books)
            .collect()
    }
}

const CONSONANTS: &[u8] = b"bdfghklmprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Base-70 syllable spelling of `value` (at least `min_syllables` long).
/// The alphabet has no `n`, so an `n` followed by a consonant can only be
/// the start of a language suffix.
fn syllables(mut value: usize, min_syllables: usize, out: &mut String) {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut count = 0;
    let mut digits = Vec::new();
    while value > 0 || count < min_syllables {
        digits.push(value % base);
        value /= base;
        count += 1;
    }
    for d in digits.into_iter().rev() {
        out.push(CONSONANTS[d / VOWELS.len()] as char);
        out.push(VOWELS[d % VOWELS.len()] as char);
    }
}

fn surface(lang: usize, id: usize) -> String {
    let mut s = String::new();
    syllables(id, 2, &mut s);
    s.push('n');
    syllables(lang, 1, &mut s);
    s
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Interlingua sentences as token ids, one list per line.
fn interlingua(spec: &SyntheticCorpusSpec) -> Vec<Vec<usize>> {
    let v = spec.vocabulary_size;
    let weights: Vec<f64> = (0..v)
        .map(|r| ((r + 1) as f64).powf(-spec.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    let shared = ((spec.shared_fraction * v as f64).round() as usize).min(v);

    let mut rng = seeded(spec.rng_seed, 0);
    let cluster_maps: Vec<Vec<usize>> = (0..spec.genre_clusters)
        .map(|_| {
            let mut tail: Vec<usize> = (shared..v).collect();
            tail.shuffle(&mut rng);
            (0..shared).chain(tail).collect()
        })
        .collect();

    let mut lines = Vec::with_capacity(spec.num_books * spec.lines_per_book);
    let mut seen = HashSet::new();
    for cluster in spec.book_clusters() {
        let map = &cluster_maps[cluster];
        for _ in 0..spec.lines_per_book {
            let len = rng.gen_range(spec.min_sentence_length..=spec.max_sentence_length);
            let mut sentence = Vec::with_capacity(len);
            seen.clear();
            while sentence.len() < len {
                let id = map[zipf.sample(&mut rng)];
                if seen.insert(id) {
                    sentence.push(id);
                }
            }
            lines.push(sentence);
        }
    }
    lines
}

// SplitMix64 finalizer: a fixed, seedable hash for per-language merge choices.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn merges(seed: u64, lang: usize, a: usize, b: usize, rate: f64) -> bool {
    if rate <= 0.0 {
        return false;
    }
    let h = mix(
        mix(mix(seed ^ (lang as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ a as u64) ^ b as u64,
    );
    ((h >> 11) as f64) / ((1u64 << 53) as f64) < rate
}

fn realize(spec: &SyntheticCorpusSpec, lang: usize, base: &[Vec<usize>]) -> Vec<Vec<String>> {
    let swap = SyntheticCorpusSpec::rate(&spec.permutation_noise, lang);
    let merge = SyntheticCorpusSpec::rate(&spec.merge_noise, lang);
    let mut names: Vec<usize> = (0..spec.vocabulary_size).collect();
    let mut rng = seeded(spec.rng_seed, 1 + lang as u64);
    names.shuffle(&mut rng);

    base.iter()
        .map(|ids| {
            let mut words: Vec<String> = Vec::with_capacity(ids.len());
            let mut k = 0;
            while k < ids.len() {
                if k + 1 < ids.len() && merges(spec.rng_seed, lang, ids[k], ids[k + 1], merge) {
                    words.push(format!(
                        "{}{}",
                        surface(lang, names[ids[k]]),
                        surface(lang, names[ids[k + 1]])
                    ));
                    k += 2;
                } else {
                    words.push(surface(lang, names[ids[k]]));
                    k += 1;
                }
            }
            if swap > 0.0 {
                let mut k = 0;
                while k + 1 < words.len() {
                    if rng.gen_bool(swap) {
                        words.swap(k, k + 1);
                        k += 2;
                    } else {
                        k += 1;
                    }
                }
            }
            words
        })
        .collect()
}

/// Builds the corpus in memory. Books are named `book01`, `book02`, ...;
/// languages `l00`, `l01`, ...
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<ParallelCorpus, SynthError> {
    spec.validate()?;
    let base = interlingua(spec);
    let mut lines = BTreeMap::new();
    for (k, code) in spec.language_codes().into_iter().enumerate() {
        lines.insert(code, realize(spec, k, &base));
    }
    let width = spec.num_books.to_string().len().max(2);
    let books = (0..spec.num_books)
        .map(|b| Book {
            name: format!("book{:0width$}", b + 1),
            start: b * spec.lines_per_book,
            end: (b + 1) * spec.lines_per_book,
        })
        .collect();
    let index = BookIndex::new(books, base.len())?;
    Ok(ParallelCorpus::new(lines, index, spec.rng_seed)?)
}

/// Generates the corpus and writes it (plus `synth.toml` echoing the spec)
/// into `dir`. Returns the manifest path.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec, dir: &Path) -> Result<PathBuf, SynthError> {
    let corpus = generate_corpus(spec)?;
    let manifest = corpus.save(dir)?;
    let echo = toml::to_string(spec).map_err(|e| invalid(e.to_string()))?;
    let path = dir.join("synth.toml");
    std::fs::write(&path, echo).map_err(|source| CorpusError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(manifest)
}

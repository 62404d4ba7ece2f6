//! Multi-source combination by centeredness: for each sentence, pick the
//! hypothesis whose summed similarity to all hypotheses is largest.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bleu::sentence_bleu_smoothed;
use crate::corpus::LanguageId;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("hypothesis set for sentence {0} is empty")]
    EmptyHypothesisSet(usize),
    #[error("sentence index {found} follows {previous}; sets must be consecutive")]
    IndexGap { previous: usize, found: usize },
    #[error("sentence {0} has a different source-language list")]
    MismatchedLanguages(usize),
    #[error("language {language} appears twice in sentence {sentence}")]
    DuplicateLanguage { sentence: usize, language: String },
}

/// Pairwise similarity between two candidate translations, in `[0, 1]`.
pub trait SimilarityKernel: Sync {
    fn similarity(&self, a: &[String], b: &[String]) -> f64;
}

/// Symmetrized add-one smoothed sentence BLEU.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothedBleuKernel;

impl SimilarityKernel for SmoothedBleuKernel {
    fn similarity(&self, a: &[String], b: &[String]) -> f64 {
        similarity(a, b)
    }
}

/// Symmetrized smoothed sentence BLEU. Two empty sentences are identical;
/// one empty side scores 0.
pub fn similarity(a: &[String], b: &[String]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => 0.5 * (sentence_bleu_smoothed(a, b) + sentence_bleu_smoothed(b, a)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub language: LanguageId,
    pub tokens: Vec<String>,
}

/// Candidates for one sentence, in family order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub sentence_index: usize,
    pub hypotheses: Vec<Hypothesis>,
}

/// Symmetric N×N matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn compute<K: SimilarityKernel + ?Sized>(hypotheses: &[Hypothesis], kernel: &K) -> Self {
        let size = hypotheses.len();
        let mut values = vec![0.0; size * size];
        for i in 0..size {
            values[i * size + i] = 1.0;
            for j in i + 1..size {
                let s = kernel.similarity(&hypotheses[i].tokens, &hypotheses[j].tokens);
                values[i * size + j] = s;
                values[j * size + i] = s;
            }
        }
        Self { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .chunks(self.size)
            .map(|row| row.iter().sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredChoice {
    pub chosen_index: usize,
    pub chosen_language: LanguageId,
    pub tokens: Vec<String>,
    pub centeredness: Vec<f64>,
}

/// Index of the maximal score among eligible entries, earliest on ties.
/// Empty hypotheses are eligible only when every hypothesis is empty.
pub(crate) fn most_centered(scores: &[f64], hypotheses: &[Hypothesis]) -> usize {
    let all_empty = hypotheses.iter().all(|h| h.tokens.is_empty());
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if !all_empty && hypotheses[i].tokens.is_empty() {
            continue;
        }
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

pub fn centered_combine_with<K: SimilarityKernel + ?Sized>(
    hset: &HypothesisSet,
    kernel: &K,
) -> Result<CenteredChoice, EnsembleError> {
    if hset.hypotheses.is_empty() {
        return Err(EnsembleError::EmptyHypothesisSet(hset.sentence_index));
    }
    let matrix = SimilarityMatrix::compute(&hset.hypotheses, kernel);
    let centeredness = matrix.row_sums();
    let chosen_index = most_centered(&centeredness, &hset.hypotheses);
    let chosen = &hset.hypotheses[chosen_index];
    Ok(CenteredChoice {
        chosen_index,
        chosen_language: chosen.language.clone(),
        tokens: chosen.tokens.clone(),
        centeredness,
    })
}

pub fn centered_combine(hset: &HypothesisSet) -> Result<CenteredChoice, EnsembleError> {
    centered_combine_with(hset, &SmoothedBleuKernel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedDocument {
    pub first_index: usize,
    pub choices: Vec<CenteredChoice>,
    /// Sentences won per source language, in family order.
    pub wins: Vec<(LanguageId, usize)>,
}

impl CombinedDocument {
    pub fn draft(&self) -> Vec<Vec<String>> {
        self.choices.iter().map(|c| c.tokens.clone()).collect()
    }
}

/// Combines consecutive sentences that share one source-language list.
pub fn combine_document(sets: &[HypothesisSet]) -> Result<CombinedDocument, EnsembleError> {
    let Some(first) = sets.first() else {
        return Ok(CombinedDocument {
            first_index: 0,
            choices: Vec::new(),
            wins: Vec::new(),
        });
    };
    let languages: Vec<&LanguageId> = first.hypotheses.iter().map(|h| &h.language).collect();
    for (k, set) in sets.iter().enumerate() {
        if k > 0 && set.sentence_index != sets[k - 1].sentence_index + 1 {
            return Err(EnsembleError::IndexGap {
                previous: sets[k - 1].sentence_index,
                found: set.sentence_index,
            });
        }
        if set.hypotheses.is_empty() {
            return Err(EnsembleError::EmptyHypothesisSet(set.sentence_index));
        }
        if !set
            .hypotheses
            .iter()
            .map(|h| &h.language)
            .eq(languages.iter().copied())
        {
            return Err(EnsembleError::MismatchedLanguages(set.sentence_index));
        }
    }
    for (i, lang) in languages.iter().enumerate() {
        if languages[..i].contains(lang) {
            return Err(EnsembleError::DuplicateLanguage {
                sentence: first.sentence_index,
                language: lang.to_string(),
            });
        }
    }
    let choices = sets
        .par_iter()
        .map(centered_combine)
        .collect::<Result<Vec<_>, _>>()?;
    let mut wins: Vec<(LanguageId, usize)> = languages.iter().map(|&l| (l.clone(), 0)).collect();
    for c in &choices {
        wins[c.chosen_index].1 += 1;
    }
    Ok(CombinedDocument {
        first_index: first.sentence_index,
        choices,
        wins,
    })
}

//! Source-language ranking by alignment statistics.
//!
//! Each candidate source language gets a lexical model trained on the seed
//! lines paired with the target. Viterbi alignments under that model give a
//! zero-distortion probability (how often consecutive aligned target words
//! come from adjacent source words) and a fertility-one probability (how
//! often a source word aligns to exactly one target word).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, LanguagePair, LexicalBackend, LexicalConfig, TrainingPair, TranslationBackend,
    TranslationModel,
};
use crate::corpus::{LanguageId, ParallelCorpus};

#[derive(Debug, thiserror::Error)]
pub enum FamilyError {
    #[error("model has no trained parameters")]
    UntrainedModel,
    #[error("no sentence pair has at least two alignment links")]
    InsufficientLinks,
    #[error("{available} candidate languages, family size {k} requested")]
    NotEnoughLanguages { available: usize, k: usize },
    #[error("linguistic family method requires a language list")]
    MissingLinguisticList,
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("unknown family method {0:?}")]
    UnknownMethod(String),
    #[error("scoring language {language}")]
    Training {
        language: String,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignmentLink {
    pub source_pos: usize,
    pub target_pos: usize,
}

/// Links each target word to its most probable source word, or to nothing
/// when the null source is strictly more probable. Ties go to the lowest
/// source position.
pub fn viterbi_align(
    source: &[String],
    target: &[String],
    model: &TranslationModel,
) -> Result<Vec<AlignmentLink>, FamilyError> {
    if model.source_tokens().next().is_none() {
        return Err(FamilyError::UntrainedModel);
    }
    let mut links = Vec::new();
    for (j, f) in target.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in source.iter().enumerate() {
            let p = model.prob(e, f);
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        if let Some((i, p)) = best {
            if p >= model.null_prob(f) {
                links.push(AlignmentLink {
                    source_pos: i,
                    target_pos: j,
                });
            }
        }
    }
    Ok(links)
}

/// One aligned sentence pair, reduced to what the statistics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub source_len: usize,
    pub target_len: usize,
    pub links: Vec<AlignmentLink>,
}

fn check_links(aligned: &[AlignedPair]) -> Result<(), FamilyError> {
    if aligned.iter().any(|a| a.links.len() >= 2) {
        Ok(())
    } else {
        Err(FamilyError::InsufficientLinks)
    }
}

/// Fraction of consecutive linked target positions whose source positions
/// advance by exactly one.
pub fn zero_distortion_probability(aligned: &[AlignedPair]) -> Result<f64, FamilyError> {
    check_links(aligned)?;
    let (mut zero, mut total) = (0usize, 0usize);
    for pair in aligned {
        let mut links = pair.links.clone();
        links.sort_by_key(|l| l.target_pos);
        for w in links.windows(2) {
            total += 1;
            if w[1].source_pos as i64 - w[0].source_pos as i64 == 1 {
                zero += 1;
            }
        }
    }
    Ok(zero as f64 / total as f64)
}

/// Fraction of source tokens linked by exactly one alignment link.
pub fn fertility_one_probability(aligned: &[AlignedPair]) -> Result<f64, FamilyError> {
    check_links(aligned)?;
    let (mut ones, mut tokens) = (0usize, 0usize);
    for pair in aligned {
        let mut fertility = vec![0usize; pair.source_len];
        for l in &pair.links {
            fertility[l.source_pos] += 1;
        }
        tokens += pair.source_len;
        ones += fertility.iter().filter(|&&f| f == 1).count();
    }
    Ok(ones as f64 / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyMethod {
    Linguistic,
    Distortion,
    Performance,
}

impl FromStr for FamilyMethod {
    type Err = FamilyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linguistic" => Ok(Self::Linguistic),
            "distortion" => Ok(Self::Distortion),
            "performance" => Ok(Self::Performance),
            other => Err(FamilyError::UnknownMethod(other.to_owned())),
        }
    }
}

impl fmt::Display for FamilyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linguistic => "linguistic",
            Self::Distortion => "distortion",
            Self::Performance => "performance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub language: LanguageId,
    pub p_zero_distortion: f64,
    pub p_fertility_one: f64,
    /// Product of the two probabilities.
    pub performance_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub method: FamilyMethod,
    pub members: Vec<LanguageId>,
}

/// Trains a plain source→target model on `lines` and measures its
/// alignment statistics.
pub fn score_language(
    corpus: &ParallelCorpus,
    source: &LanguageId,
    target: &LanguageId,
    lines: &BTreeSet<usize>,
    config: &LexicalConfig,
) -> Result<LanguageScore, FamilyError> {
    for lang in [source, target] {
        if !corpus.has_language(lang) {
            return Err(FamilyError::UnknownLanguage(lang.to_string()));
        }
    }
    let usable: Vec<usize> = lines
        .iter()
        .copied()
        .filter(|&i| !corpus.line(source, i).is_empty() && !corpus.line(target, i).is_empty())
        .collect();
    let pairs: Vec<TrainingPair> = usable
        .iter()
        .map(|&i| {
            TrainingPair::new(
                corpus.line(source, i).to_vec(),
                corpus.line(target, i).to_vec(),
            )
        })
        .collect();
    let backend = LexicalBackend::new(config.clone());
    let languages = LanguagePair {
        source: source.clone(),
        target: target.clone(),
    };
    let model = backend
        .train(&languages, &pairs, None)
        .map_err(|e| FamilyError::Training {
            language: source.to_string(),
            source: e,
        })?;
    let aligned = pairs
        .iter()
        .map(|p| {
            Ok(AlignedPair {
                source_len: p.source.len(),
                target_len: p.target.len(),
                links: viterbi_align(&p.source, &p.target, &model)?,
            })
        })
        .collect::<Result<Vec<_>, FamilyError>>()?;
    let p_zero_distortion = zero_distortion_probability(&aligned)?;
    let p_fertility_one = fertility_one_probability(&aligned)?;
    Ok(LanguageScore {
        language: source.clone(),
        p_zero_distortion,
        p_fertility_one,
        performance_score: p_zero_distortion * p_fertility_one,
    })
}

/// Scores every candidate and orders them by `method`. For the linguistic
/// method the list order is kept and languages outside the list are
/// dropped. Ties break by language code.
pub fn rank_languages(
    corpus: &ParallelCorpus,
    target: &LanguageId,
    seed_lines: &BTreeSet<usize>,
    method: FamilyMethod,
    linguistic_list: Option<&[LanguageId]>,
    config: &LexicalConfig,
) -> Result<Vec<LanguageScore>, FamilyError> {
    if !corpus.has_language(target) {
        return Err(FamilyError::UnknownLanguage(target.to_string()));
    }
    let candidates: Vec<LanguageId> = match method {
        FamilyMethod::Linguistic => {
            let list = linguistic_list.ok_or(FamilyError::MissingLinguisticList)?;
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for lang in list {
                if !corpus.has_language(lang) {
                    return Err(FamilyError::UnknownLanguage(lang.to_string()));
                }
                if lang != target && seen.insert(lang.clone()) {
                    out.push(lang.clone());
                }
            }
            out
        }
        _ => corpus
            .languages()
            .filter(|l| *l != target)
            .cloned()
            .collect(),
    };
    let mut scores = candidates
        .par_iter()
        .map(|lang| score_language(corpus, lang, target, seed_lines, config))
        .collect::<Result<Vec<_>, _>>()?;
    let key = |s: &LanguageScore| match method {
        FamilyMethod::Distortion => s.p_zero_distortion,
        FamilyMethod::Performance => s.performance_score,
        FamilyMethod::Linguistic => 0.0,
    };
    if method != FamilyMethod::Linguistic {
        scores.sort_by(|a, b| {
            key(b)
                .total_cmp(&key(a))
                .then_with(|| a.language.cmp(&b.language))
        });
    }
    Ok(scores)
}

/// Picks the top `k` source languages for `target`.
pub fn build_family(
    corpus: &ParallelCorpus,
    target: &LanguageId,
    seed_lines: &BTreeSet<usize>,
    method: FamilyMethod,
    k: usize,
    linguistic_list: Option<&[LanguageId]>,
    config: &LexicalConfig,
) -> Result<Family, FamilyError> {
    let members: Vec<LanguageId> = match method {
        // Linguistic families need no alignment statistics.
        FamilyMethod::Linguistic => {
            let list = linguistic_list.ok_or(FamilyError::MissingLinguisticList)?;
            let mut members: Vec<LanguageId> = Vec::new();
            for lang in list {
                if !corpus.has_language(lang) {
                    return Err(FamilyError::UnknownLanguage(lang.to_string()));
                }
                if lang != target && !members.contains(lang) {
                    members.push(lang.clone());
                }
            }
            members
        }
        _ => rank_languages(corpus, target, seed_lines, method, None, config)?
            .into_iter()
            .map(|s| s.language)
            .collect(),
    };
    if members.len() < k || k == 0 {
        return Err(FamilyError::NotEnoughLanguages {
            available: members.len(),
            k,
        });
    }
    Ok(Family {
        method,
        members: members.into_iter().take(k).collect(),
    })
}

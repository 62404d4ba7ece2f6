//! Corpus BLEU-4 for evaluation and smoothed sentence BLEU for ranking and
//! hypothesis similarity.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{LanguageId, ParallelCorpus};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BleuError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("no nonempty reference to evaluate against")]
    EmptyEvaluationSet,
    #[error("draft has {got} lines, corpus has {expected}")]
    MisalignedDraft { expected: usize, got: usize },
    #[error("unknown reference language {0}")]
    UnknownLanguage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// 0..=100
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    /// `min(1, exp(1 - ref/hyp))`; 0 for an empty hypothesis side.
    pub brevity_penalty: f64,
    pub hyp_length: usize,
    pub ref_length: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram totals for orders 1..=4.
fn clipped_stats(hyp: &[String], reference: &[String]) -> ([usize; MAX_ORDER], [usize; MAX_ORDER]) {
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let ref_counts = ngram_counts(reference, n);
        for (gram, count) in ngram_counts(hyp, n) {
            matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
        }
        totals[n - 1] = hyp.len().saturating_sub(n - 1);
    }
    (matches, totals)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Unsmoothed corpus-level BLEU-4.
pub fn corpus_bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuReport, BleuError>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hypotheses.len() != references.len() {
        return Err(BleuError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if references.iter().all(|r| r.as_ref().is_empty()) {
        return Err(BleuError::EmptyEvaluationSet);
    }
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    let (mut hyp_length, mut ref_length) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (m, t) = clipped_stats(h.as_ref(), r.as_ref());
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_length += h.as_ref().len();
        ref_length += r.as_ref().len();
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let bp = brevity_penalty(hyp_length, ref_length);
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * bp * log_mean.exp()
    } else {
        0.0
    };
    Ok(BleuReport {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty: bp,
        hyp_length,
        ref_length,
    })
}

/// Add-one smoothed sentence BLEU-4 in `[0, 1]`.
///
/// An empty hypothesis scores 0 against a nonempty reference and 1 against
/// an empty one.
pub fn sentence_bleu_smoothed(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let (matches, totals) = clipped_stats(hypothesis, reference);
    let log_mean = (0..MAX_ORDER)
        .map(|n| ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln())
        .sum::<f64>()
        / MAX_ORDER as f64;
    brevity_penalty(hypothesis.len(), reference.len()) * log_mean.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookBleu {
    pub book: String,
    pub report: BleuReport,
    pub lines: usize,
}

/// BLEU per book over the book's lines minus `excluded_lines`. Books with no
/// remaining lines, or only empty references, are omitted.
pub fn per_book_bleu(
    corpus: &ParallelCorpus,
    draft: &[Vec<String>],
    reference_language: &LanguageId,
    excluded_lines: &BTreeSet<usize>,
) -> Result<Vec<BookBleu>, BleuError> {
    let n = corpus.n_total();
    if draft.len() != n {
        return Err(BleuError::MisalignedDraft {
            expected: n,
            got: draft.len(),
        });
    }
    let reference = corpus
        .text(reference_language)
        .map_err(|_| BleuError::UnknownLanguage(reference_language.to_string()))?;
    let mut out = Vec::new();
    for book in corpus.book_index().books() {
        let kept: Vec<usize> = book
            .lines()
            .filter(|i| !excluded_lines.contains(i))
            .collect();
        if kept.is_empty() {
            continue;
        }
        let hyps: Vec<&[String]> = kept.iter().map(|&i| draft[i].as_slice()).collect();
        let refs: Vec<&[String]> = kept.iter().map(|&i| reference[i].as_slice()).collect();
        match corpus_bleu(&hyps, &refs) {
            Ok(report) => out.push(BookBleu {
                book: book.name.clone(),
                report,
                lines: kept.len(),
            }),
            Err(BleuError::EmptyEvaluationSet) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

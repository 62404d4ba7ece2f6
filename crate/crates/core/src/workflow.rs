//! The human-in-the-loop translation workflow: seed selection, model-update
//! strategies, and the iterative train → translate → combine → rank →
//! post-edit cycle.
//!
//! Post-editing is simulated by revealing reference lines of the chosen
//! book (optionally corrupted by token noise). Each iteration:
//!
//! 1. pretrains a shared prior on the family's full texts when the last
//!    post-edit grew the target vocabulary (`Δv > 0`) and the strategy
//!    allows it;
//! 2. trains a multi-source model on every family language's pairs, then
//!    one model per family language starting from it;
//! 3. translates every line without a human translation from each family
//!    language and keeps the most centered hypothesis;
//! 4. ranks books by draft BLEU, post-edits the best unedited one, and
//!    updates `n`, `v` and `Δv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    BackendError, LanguagePair, LexicalConfig, TrainingPair, TranslationBackend, Vocabulary,
    VocabularyPolicy,
};
use crate::bleu::{corpus_bleu, per_book_bleu, BleuError, BleuReport, BookBleu};
use crate::corpus::{is_placeholder, CorpusError, LanguageId, ParallelCorpus};
use crate::ensemble::{centered_combine, EnsembleError, Hypothesis, HypothesisSet};
use crate::family::{rank_languages, Family, FamilyError, FamilyMethod, LanguageScore};
use crate::lexicon::{
    prefix_language_labels, restore_entities_lenient, tag_entities, LexiconError, LexiconTable,
    TaggedSentence,
};

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error("every line already has a human translation")]
    LoopComplete,
    #[error("sample of {size} lines requested from a corpus of {n}")]
    SampleTooLarge { size: usize, n: usize },
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("unknown book {0:?}")]
    UnknownBook(String),
    #[error("line {0} is already human-translated")]
    OverlapWithExisting(usize),
    #[error("proxy language {0} is the target language")]
    ProxyIsTarget(String),
    #[error("invalid loop settings: {0}")]
    InvalidSettings(String),
    #[error("backend failure in iteration {iteration}, language {language}")]
    Backend {
        iteration: usize,
        language: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// How the initial human-translated lines are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionStrategy {
    /// Uniform sample without replacement over the whole text.
    RandomSample { size: usize, rng_seed: u64 },
    /// One contiguous book.
    Portion { book: String },
}

pub fn select_seed(
    corpus: &ParallelCorpus,
    strategy: &SelectionStrategy,
) -> Result<BTreeSet<usize>, LoopError> {
    let n = corpus.n_total();
    match strategy {
        SelectionStrategy::RandomSample { size, rng_seed } => {
            if *size == 0 {
                return Err(LoopError::InvalidSelection(
                    "sample size must be at least 1".into(),
                ));
            }
            if *size > n {
                return Err(LoopError::SampleTooLarge { size: *size, n });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*rng_seed);
            Ok(sample(&mut rng, n, *size).into_iter().collect())
        }
        SelectionStrategy::Portion { book } => corpus
            .book_index()
            .get(book)
            .map(|b| b.lines().collect())
            .ok_or_else(|| LoopError::UnknownBook(book.clone())),
    }
}

/// How post-edited lines feed back into training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    /// Never train on post-edited lines.
    SeedOnly,
    /// Train on them with unseen tokens mapped to `<unk>`.
    OldVocab,
    /// Train on them and grow the vocabulary.
    UpdatedVocab,
    /// Like `UpdatedVocab`, plus the machine draft as weighted pseudo-pairs
    /// in pretraining.
    SelfSupervised,
}

impl UpdateStrategy {
    pub const ALL: [UpdateStrategy; 4] = [
        UpdateStrategy::SeedOnly,
        UpdateStrategy::OldVocab,
        UpdateStrategy::UpdatedVocab,
        UpdateStrategy::SelfSupervised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpdateStrategy::SeedOnly => "seed_only",
            UpdateStrategy::OldVocab => "old_vocab",
            UpdateStrategy::UpdatedVocab => "updated_vocab",
            UpdateStrategy::SelfSupervised => "self_supervised",
        }
    }
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpdateStrategy {
    type Err = LoopError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| LoopError::InvalidSettings(format!("unknown update strategy {s:?}")))
    }
}

/// Which book the simulated translators post-edit next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BookChoice {
    /// Highest draft BLEU against the withheld reference.
    Oracle,
    /// First not-yet-edited book of a fixed preference list, e.g. one
    /// produced by [`heldout_language_ordering`].
    Ordered(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSettings {
    pub update: UpdateStrategy,
    /// Weight of every pair in the multi-source training phase.
    pub multi_source_weight: f64,
    /// Weight of self-supervised draft pairs in pretraining.
    pub pseudo_weight: f64,
    /// Per-token corruption rate of simulated post-edits.
    pub post_edit_noise: f64,
    pub noise_seed: u64,
    /// Books that are never post-edited; reported as a fixed test set.
    pub heldout_books: Vec<String>,
    pub book_choice: BookChoice,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            update: UpdateStrategy::UpdatedVocab,
            multi_source_weight: 1.0,
            pseudo_weight: 0.3,
            post_edit_noise: 0.0,
            noise_seed: 0,
            heldout_books: Vec::new(),
            book_choice: BookChoice::Oracle,
        }
    }
}

/// Per-language training pairs for the next training round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInputs {
    /// Human-translated lines the pairs are built from.
    pub lines: BTreeSet<usize>,
    pub pairs: BTreeMap<LanguageId, Vec<TrainingPair>>,
    pub policy: VocabularyPolicy,
    /// Target token types the new lines add to the human vocabulary.
    pub new_types: usize,
    pub schedule_pretrain: bool,
    /// Draft pseudo-pair weight when the strategy uses them.
    pub pseudo_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// Counters at entry to the iteration.
    pub n: usize,
    pub v: usize,
    pub delta_v: usize,
    pub pretrained: bool,
    /// Full draft (human lines included) against the reference.
    pub book_bleu: Vec<BookBleu>,
    /// Machine lines of books still eligible for post-editing.
    pub ranking: Vec<BookBleu>,
    pub machine_bleu: Option<BleuReport>,
    pub heldout_bleu: Option<BleuReport>,
    /// Sentences won by each family language in the combination.
    pub wins: Vec<(LanguageId, usize)>,
    pub dropped_placeholders: usize,
    pub chosen_book: Option<String>,
    pub new_lines: usize,
    pub new_types: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    /// Human-translated lines: seed plus post-edits.
    pub n: usize,
    /// Distinct target tokens over human-translated lines.
    pub v: usize,
    /// Types added by the latest post-edit.
    pub delta_v: usize,
    pub iteration: usize,
    pub seed_lines: BTreeSet<usize>,
    pub post_edited: BTreeSet<usize>,
    /// Human text for human lines, the combined machine translation (or
    /// nothing yet) elsewhere.
    pub draft: Vec<Vec<String>>,
    pub human_vocabulary: BTreeSet<String>,
    pub history: Vec<IterationRecord>,
    #[serde(skip)]
    next_inputs: Option<TrainingInputs>,
}

impl LoopState {
    pub fn human_lines(&self) -> BTreeSet<usize> {
        self.seed_lines.union(&self.post_edited).copied().collect()
    }

    pub fn is_human(&self, line: usize) -> bool {
        self.seed_lines.contains(&line) || self.post_edited.contains(&line)
    }

    pub fn machine_lines(&self) -> Vec<usize> {
        (0..self.draft.len())
            .filter(|&i| !self.is_human(i))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.n >= self.draft.len()
    }
}

fn backend_err(
    iteration: usize,
    language: &LanguageId,
) -> impl FnOnce(BackendError) -> LoopError + '_ {
    move |source| LoopError::Backend {
        iteration,
        language: language.to_string(),
        source,
    }
}

/// One experiment's moving parts: backend, corpus, family and settings,
/// plus the pretrained prior carried across iterations.
pub struct Workflow<'a, B: TranslationBackend> {
    backend: &'a B,
    corpus: &'a ParallelCorpus,
    target: LanguageId,
    members: Vec<LanguageId>,
    lexicon: Option<&'a LexiconTable>,
    settings: LoopSettings,
    tagged: BTreeMap<LanguageId, Vec<TaggedSentence>>,
    frozen: BTreeMap<LanguageId, Vocabulary>,
    heldout_lines: BTreeSet<usize>,
    target_types: Vec<String>,
    prior: Option<B::Model>,
}

impl<'a, B: TranslationBackend> Workflow<'a, B> {
    pub fn new(
        backend: &'a B,
        corpus: &'a ParallelCorpus,
        target: &LanguageId,
        family: &Family,
        lexicon: Option<&'a LexiconTable>,
        settings: LoopSettings,
    ) -> Result<Self, LoopError> {
        let reference = corpus.text(target)?;
        if family.members.is_empty() {
            return Err(LoopError::InvalidSettings("family has no members".into()));
        }
        for (i, m) in family.members.iter().enumerate() {
            corpus.text(m)?;
            if m == target {
                return Err(LoopError::InvalidSettings(format!(
                    "family contains the target {m}"
                )));
            }
            if family.members[..i].contains(m) {
                return Err(LoopError::InvalidSettings(format!(
                    "family lists {m} twice"
                )));
            }
        }
        if !(settings.multi_source_weight > 0.0 && settings.multi_source_weight.is_finite()) {
            return Err(LoopError::InvalidSettings(
                "multi_source_weight must be positive".into(),
            ));
        }
        if !(settings.pseudo_weight >= 0.0 && settings.pseudo_weight.is_finite()) {
            return Err(LoopError::InvalidSettings(
                "pseudo_weight must be ≥ 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&settings.post_edit_noise) {
            return Err(LoopError::InvalidSettings(
                "post_edit_noise must lie in [0, 1]".into(),
            ));
        }
        let mut heldout_lines = BTreeSet::new();
        for name in &settings.heldout_books {
            let book = corpus
                .book_index()
                .get(name)
                .ok_or_else(|| LoopError::UnknownBook(name.clone()))?;
            heldout_lines.extend(book.lines());
        }
        if let BookChoice::Ordered(list) = &settings.book_choice {
            if let Some(name) = list.iter().find(|b| corpus.book_index().get(b).is_none()) {
                return Err(LoopError::UnknownBook(name.clone()));
            }
        }
        let mut workflow = Self {
            backend,
            corpus,
            target: target.clone(),
            members: family.members.clone(),
            lexicon,
            settings,
            tagged: BTreeMap::new(),
            frozen: BTreeMap::new(),
            heldout_lines,
            target_types: reference
                .iter()
                .flatten()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            prior: None,
        };
        for lang in &family.members {
            let tagged = corpus
                .text(lang)?
                .par_iter()
                .map(|line| workflow.tag(line, lang))
                .collect::<Result<Vec<_>, _>>()?;
            workflow.tagged.insert(lang.clone(), tagged);
        }
        Ok(workflow)
    }

    pub fn target(&self) -> &LanguageId {
        &self.target
    }

    pub fn members(&self) -> &[LanguageId] {
        &self.members
    }

    pub fn settings(&self) -> &LoopSettings {
        &self.settings
    }

    fn tag(&self, tokens: &[String], lang: &LanguageId) -> Result<TaggedSentence, LoopError> {
        match self.lexicon {
            Some(lex) if lex.has_language(lang) => Ok(tag_entities(tokens, lex, lang)?),
            _ => Ok(TaggedSentence {
                source_language: lang.clone(),
                tokens: tokens.to_vec(),
                bindings: Vec::new(),
            }),
        }
    }

    fn labeled(&self, lang: &LanguageId, to: &LanguageId, tokens: &[String]) -> Vec<String> {
        prefix_language_labels(tokens, lang, to).expect("corpus lines carry no label tokens")
    }

    fn pair(
        &self,
        lang: &LanguageId,
        line: usize,
        target_text: &[String],
    ) -> Result<TrainingPair, LoopError> {
        let source = self.labeled(lang, &self.target, &self.tagged[lang][line].tokens);
        let target = self.tag(target_text, &self.target)?.tokens;
        Ok(TrainingPair::new(source, target))
    }

    fn restore(&self, tagged: &TaggedSentence) -> (Vec<String>, usize) {
        match self.lexicon {
            Some(lex) => {
                let (tokens, diag) = restore_entities_lenient(tagged, &self.target, lex);
                (tokens, diag.dropped_placeholders)
            }
            None => {
                let kept: Vec<String> = tagged
                    .tokens
                    .iter()
                    .filter(|t| !is_placeholder(t))
                    .cloned()
                    .collect();
                let dropped = tagged.tokens.len() - kept.len();
                (kept, dropped)
            }
        }
    }

    /// Initial state for a seed: its reference lines count as human
    /// translations; `Δv` starts at 0.
    pub fn start(&mut self, seed_lines: &BTreeSet<usize>) -> Result<LoopState, LoopError> {
        let n_total = self.corpus.n_total();
        if seed_lines.is_empty() {
            return Err(LoopError::InvalidSelection("empty seed".into()));
        }
        if let Some(&index) = seed_lines.iter().next_back().filter(|&&i| i >= n_total) {
            return Err(CorpusError::SeedOutOfRange { index, n: n_total }.into());
        }
        let reference = self.corpus.text(&self.target)?;
        let mut draft = vec![Vec::new(); n_total];
        let mut human_vocabulary = BTreeSet::new();
        for &i in seed_lines {
            draft[i] = reference[i].clone();
            human_vocabulary.extend(reference[i].iter().cloned());
        }
        let mut state = LoopState {
            n: seed_lines.len(),
            v: human_vocabulary.len(),
            delta_v: 0,
            iteration: 0,
            seed_lines: seed_lines.clone(),
            post_edited: BTreeSet::new(),
            draft,
            human_vocabulary,
            history: Vec::new(),
            next_inputs: None,
        };
        self.prior = None;
        self.frozen.clear();
        let inputs =
            self.apply_update_strategy(&state, &BTreeSet::new(), UpdateStrategy::UpdatedVocab)?;
        for (lang, pairs) in &inputs.pairs {
            self.frozen
                .insert(lang.clone(), Vocabulary::from_pairs(pairs));
        }
        state.next_inputs =
            Some(self.apply_update_strategy(&state, &BTreeSet::new(), self.settings.update)?);
        Ok(state)
    }

    /// Training inputs once `new_lines` (whose edited text is already in
    /// `state.draft`) join the human-translated lines.
    pub fn apply_update_strategy(
        &self,
        state: &LoopState,
        new_lines: &BTreeSet<usize>,
        update: UpdateStrategy,
    ) -> Result<TrainingInputs, LoopError> {
        if let Some(&line) = new_lines.iter().find(|&&i| state.is_human(i)) {
            return Err(LoopError::OverlapWithExisting(line));
        }
        if let Some(&index) = new_lines
            .iter()
            .next_back()
            .filter(|&&i| i >= state.draft.len())
        {
            return Err(CorpusError::SeedOutOfRange {
                index,
                n: state.draft.len(),
            }
            .into());
        }
        let new_types: BTreeSet<&String> = new_lines
            .iter()
            .flat_map(|&i| &state.draft[i])
            .filter(|t| !state.human_vocabulary.contains(*t))
            .collect();
        let lines: BTreeSet<usize> = match update {
            UpdateStrategy::SeedOnly => state.seed_lines.clone(),
            _ => state.human_lines().union(new_lines).copied().collect(),
        };
        let mut pairs = BTreeMap::new();
        for lang in &self.members {
            let mut own = lines
                .iter()
                .map(|&i| self.pair(lang, i, &state.draft[i]))
                .collect::<Result<Vec<_>, _>>()?;
            if update == UpdateStrategy::OldVocab {
                if let Some(vocab) = self.frozen.get(lang) {
                    own = vocab.map_unknown(&own);
                }
            }
            pairs.insert(lang.clone(), own);
        }
        Ok(TrainingInputs {
            lines,
            pairs,
            policy: if update == UpdateStrategy::OldVocab {
                VocabularyPolicy::Frozen
            } else {
                VocabularyPolicy::Updated
            },
            new_types: new_types.len(),
            schedule_pretrain: update != UpdateStrategy::SeedOnly && !new_types.is_empty(),
            pseudo_weight: (update == UpdateStrategy::SelfSupervised)
                .then_some(self.settings.pseudo_weight),
        })
    }

    /// Pretraining data: every ordered pair of family languages over the
    /// full text, plus draft pseudo-pairs for the self-supervised strategy.
    fn prior_pairs(&self, state: &LoopState) -> Vec<TrainingPair> {
        let mut pairs = Vec::new();
        for a in &self.members {
            for b in &self.members {
                if a == b {
                    continue;
                }
                for i in 0..self.corpus.n_total() {
                    pairs.push(TrainingPair::new(
                        self.labeled(a, b, &self.tagged[a][i].tokens),
                        self.tagged[b][i].tokens.clone(),
                    ));
                }
            }
        }
        if self.settings.update == UpdateStrategy::SelfSupervised {
            let machine: Vec<usize> = state
                .machine_lines()
                .into_iter()
                .filter(|&i| !state.draft[i].is_empty())
                .collect();
            for lang in &self.members {
                for &i in &machine {
                    let target = match self.tag(&state.draft[i], &self.target) {
                        Ok(t) => t.tokens,
                        // A draft line that cannot be tagged is not useful supervision.
                        Err(_) => continue,
                    };
                    pairs.push(
                        TrainingPair::new(
                            self.labeled(lang, &self.target, &self.tagged[lang][i].tokens),
                            target,
                        )
                        .weighted(self.settings.pseudo_weight),
                    );
                }
            }
        }
        pairs
    }

    fn train_models(
        &self,
        iteration: usize,
        inputs: &TrainingInputs,
    ) -> Result<Vec<B::Model>, LoopError> {
        let mul = LanguageId::new("mul").expect("valid code");
        let all: Vec<TrainingPair> = inputs
            .pairs
            .values()
            .flatten()
            .map(|p| {
                p.clone()
                    .weighted(p.weight * self.settings.multi_source_weight)
            })
            .collect();
        let init = self
            .prior
            .as_ref()
            .map(|p| (p, self.backend.pretrain_weight()));
        let multi = self
            .backend
            .train(
                &LanguagePair {
                    source: mul.clone(),
                    target: self.target.clone(),
                },
                &all,
                init,
            )
            .map_err(backend_err(iteration, &mul))?;
        self.members
            .par_iter()
            .map(|lang| {
                let languages = LanguagePair {
                    source: lang.clone(),
                    target: self.target.clone(),
                };
                self.backend
                    .train(&languages, &inputs.pairs[lang], Some((&multi, 1.0)))
                    .map_err(backend_err(iteration, lang))
            })
            .collect()
    }

    /// Steps up to ranking: optional pretraining, training, translation,
    /// combination and BLEU tables. Machine lines of `state.draft` are
    /// replaced; nothing is post-edited.
    pub fn draft_step(&mut self, state: &mut LoopState) -> Result<IterationRecord, LoopError> {
        let iteration = state.iteration + 1;
        let inputs = match state.next_inputs.take() {
            Some(inputs) => inputs,
            None => self.apply_update_strategy(state, &BTreeSet::new(), self.settings.update)?,
        };

        let mut pretrained = false;
        if state.delta_v > 0 && self.settings.update != UpdateStrategy::SeedOnly {
            let pairs = self.prior_pairs(state);
            if !pairs.is_empty() {
                let prior = self
                    .backend
                    .pretrain(&pairs)
                    .map_err(backend_err(iteration, &self.target))?;
                self.prior = Some(prior);
                pretrained = true;
            }
        }

        let models = self.train_models(iteration, &inputs)?;
        let machine = state.machine_lines();
        let combined = machine
            .par_iter()
            .map(|&i| {
                let mut hypotheses = Vec::with_capacity(self.members.len());
                let mut dropped = 0;
                for (lang, model) in self.members.iter().zip(&models) {
                    let tagged = &self.tagged[lang][i];
                    let input = self.labeled(lang, &self.target, &tagged.tokens);
                    let out = self
                        .backend
                        .translate(model, &input)
                        .map_err(backend_err(iteration, lang))?;
                    let (tokens, d) = self.restore(&tagged.with_tokens(out));
                    dropped += d;
                    hypotheses.push(Hypothesis {
                        language: lang.clone(),
                        tokens,
                    });
                }
                let choice = centered_combine(&HypothesisSet {
                    sentence_index: i,
                    hypotheses,
                })?;
                Ok((choice, dropped))
            })
            .collect::<Result<Vec<_>, LoopError>>()?;

        let mut wins: Vec<(LanguageId, usize)> =
            self.members.iter().map(|l| (l.clone(), 0)).collect();
        let mut dropped_placeholders = 0;
        for (&i, (choice, dropped)) in machine.iter().zip(combined) {
            wins[choice.chosen_index].1 += 1;
            dropped_placeholders += dropped;
            state.draft[i] = choice.tokens;
        }

        let human = state.human_lines();
        let book_bleu = per_book_bleu(self.corpus, &state.draft, &self.target, &BTreeSet::new())?;
        let excluded: BTreeSet<usize> = human.union(&self.heldout_lines).copied().collect();
        let ranking = per_book_bleu(self.corpus, &state.draft, &self.target, &excluded)?;
        let heldout: Vec<usize> = self.heldout_lines.difference(&human).copied().collect();

        Ok(IterationRecord {
            iteration,
            n: state.n,
            v: state.v,
            delta_v: state.delta_v,
            pretrained,
            book_bleu,
            ranking,
            machine_bleu: self.bleu_over(&state.draft, &machine)?,
            heldout_bleu: self.bleu_over(&state.draft, &heldout)?,
            wins,
            dropped_placeholders,
            chosen_book: None,
            new_lines: 0,
            new_types: 0,
        })
    }

    fn bleu_over(
        &self,
        draft: &[Vec<String>],
        lines: &[usize],
    ) -> Result<Option<BleuReport>, LoopError> {
        if lines.is_empty() {
            return Ok(None);
        }
        let reference = self.corpus.text(&self.target)?;
        let hyps: Vec<&[String]> = lines.iter().map(|&i| draft[i].as_slice()).collect();
        let refs: Vec<&[String]> = lines.iter().map(|&i| reference[i].as_slice()).collect();
        match corpus_bleu(&hyps, &refs) {
            Ok(r) => Ok(Some(r)),
            Err(BleuError::EmptyEvaluationSet) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn choose_book(&self, ranking: &[BookBleu]) -> Option<String> {
        match &self.settings.book_choice {
            BookChoice::Oracle => {
                let mut best: Option<&BookBleu> = None;
                for b in ranking {
                    if best.map_or(true, |x| b.report.score > x.report.score) {
                        best = Some(b);
                    }
                }
                best.map(|b| b.book.clone())
            }
            BookChoice::Ordered(list) => list
                .iter()
                .find(|name| ranking.iter().any(|b| &b.book == *name))
                .cloned(),
        }
    }

    fn post_edit(&self, reference: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
        let rate = self.settings.post_edit_noise;
        if rate <= 0.0 || self.target_types.is_empty() {
            return reference.to_vec();
        }
        reference
            .iter()
            .map(|t| {
                if rng.gen_bool(rate) {
                    self.target_types[rng.gen_range(0..self.target_types.len())].clone()
                } else {
                    t.clone()
                }
            })
            .collect()
    }

    /// One full iteration. When no book is eligible for post-editing the
    /// record's `chosen_book` is `None` and the state is otherwise final.
    pub fn run_iteration(&mut self, mut state: LoopState) -> Result<LoopState, LoopError> {
        if state.is_complete() {
            return Err(LoopError::LoopComplete);
        }
        let mut record = self.draft_step(&mut state)?;
        state.iteration = record.iteration;
        let Some(book) = self.choose_book(&record.ranking) else {
            state.history.push(record);
            return Ok(state);
        };

        let reference = self.corpus.text(&self.target)?;
        let new_lines: BTreeSet<usize> = self
            .corpus
            .book_index()
            .get(&book)
            .expect("ranked books exist")
            .lines()
            .filter(|&i| !state.is_human(i))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.noise_seed);
        rng.set_stream(record.iteration as u64);
        for &i in &new_lines {
            state.draft[i] = self.post_edit(&reference[i], &mut rng);
        }
        let inputs = self.apply_update_strategy(&state, &new_lines, self.settings.update)?;

        for &i in &new_lines {
            state
                .human_vocabulary
                .extend(state.draft[i].iter().cloned());
        }
        state.post_edited.extend(new_lines.iter().copied());
        state.n = state.seed_lines.len() + state.post_edited.len();
        state.v += inputs.new_types;
        state.delta_v = inputs.new_types;
        debug_assert_eq!(state.v, state.human_vocabulary.len());

        record.chosen_book = Some(book);
        record.new_lines = new_lines.len();
        record.new_types = inputs.new_types;
        state.next_inputs = Some(inputs);
        state.history.push(record);
        Ok(state)
    }
}

/// Family construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyPlan {
    pub method: FamilyMethod,
    pub k: usize,
    #[serde(default)]
    pub linguistic_list: Option<Vec<LanguageId>>,
    /// Languages never used as sources (e.g. the real target when a proxy
    /// stands in for it).
    #[serde(default)]
    pub exclude: Vec<LanguageId>,
}

/// Ranks candidates on the seed lines and keeps the top `k`, skipping
/// excluded languages. Returns the family and the scores behind it (empty
/// for the linguistic method).
pub fn plan_family(
    corpus: &ParallelCorpus,
    target: &LanguageId,
    seed_lines: &BTreeSet<usize>,
    plan: &FamilyPlan,
    config: &LexicalConfig,
) -> Result<(Family, Vec<LanguageScore>), LoopError> {
    let (members, scores) = match plan.method {
        FamilyMethod::Linguistic => {
            let list = plan
                .linguistic_list
                .as_deref()
                .ok_or(FamilyError::MissingLinguisticList)?;
            let mut members: Vec<LanguageId> = Vec::new();
            for lang in list {
                if !corpus.has_language(lang) {
                    return Err(FamilyError::UnknownLanguage(lang.to_string()).into());
                }
                if lang != target && !plan.exclude.contains(lang) && !members.contains(lang) {
                    members.push(lang.clone());
                }
            }
            (members, Vec::new())
        }
        method => {
            let scores: Vec<LanguageScore> =
                rank_languages(corpus, target, seed_lines, method, None, config)?
                    .into_iter()
                    .filter(|s| !plan.exclude.contains(&s.language))
                    .collect();
            (scores.iter().map(|s| s.language.clone()).collect(), scores)
        }
    };
    if plan.k == 0 || members.len() < plan.k {
        return Err(FamilyError::NotEnoughLanguages {
            available: members.len(),
            k: plan.k,
        }
        .into());
    }
    Ok((
        Family {
            method: plan.method,
            members: members.into_iter().take(plan.k).collect(),
        },
        scores,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub target: LanguageId,
    pub selection: SelectionStrategy,
    pub family: FamilyPlan,
    pub settings: LoopSettings,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub seed_lines: BTreeSet<usize>,
    pub family: Family,
    pub family_scores: Vec<LanguageScore>,
    pub history: Vec<IterationRecord>,
    pub n: usize,
    pub v: usize,
    pub final_draft: Vec<Vec<String>>,
    pub final_book_bleu: Vec<BookBleu>,
}

/// Seed → family → iterations until every line is human-translated, no
/// book is eligible, or `max_iterations` is reached. With
/// `max_iterations = 0` the seed model's draft is evaluated once.
pub fn run_experiment<B: TranslationBackend>(
    backend: &B,
    corpus: &ParallelCorpus,
    lexicon: Option<&LexiconTable>,
    plan: &ExperimentPlan,
    alignment: &LexicalConfig,
) -> Result<ExperimentRun, LoopError> {
    corpus.text(&plan.target)?;
    let seed_lines = select_seed(corpus, &plan.selection)?;
    let (family, family_scores) =
        plan_family(corpus, &plan.target, &seed_lines, &plan.family, alignment)?;
    let mut workflow = Workflow::new(
        backend,
        corpus,
        &plan.target,
        &family,
        lexicon,
        plan.settings.clone(),
    )?;
    let mut state = workflow.start(&seed_lines)?;
    if plan.max_iterations == 0 {
        if !state.is_complete() {
            let record = workflow.draft_step(&mut state)?;
            state.iteration = record.iteration;
            state.history.push(record);
        }
    } else {
        while state.iteration < plan.max_iterations && !state.is_complete() {
            state = workflow.run_iteration(state)?;
            if state
                .history
                .last()
                .is_some_and(|r| r.chosen_book.is_none())
            {
                break;
            }
        }
    }
    let final_book_bleu = per_book_bleu(corpus, &state.draft, &plan.target, &BTreeSet::new())?;
    Ok(ExperimentRun {
        seed_lines,
        family,
        family_scores,
        history: state.history,
        n: state.n,
        v: state.v,
        final_draft: state.draft,
        final_book_bleu,
    })
}

/// Book order estimated with `proxy` standing in for `plan.target`: one
/// seed → train → translate → evaluate cycle against the proxy's text, with
/// the real target excluded from the family. Books are sorted by descending
/// BLEU of their machine lines, ties by book order; books entirely inside
/// the seed or held out are omitted.
pub fn heldout_language_ordering<B: TranslationBackend>(
    backend: &B,
    corpus: &ParallelCorpus,
    lexicon: Option<&LexiconTable>,
    proxy: &LanguageId,
    plan: &ExperimentPlan,
    alignment: &LexicalConfig,
) -> Result<Vec<(String, f64)>, LoopError> {
    if *proxy == plan.target {
        return Err(LoopError::ProxyIsTarget(proxy.to_string()));
    }
    corpus.text(proxy)?;
    let seed_lines = select_seed(corpus, &plan.selection)?;
    let mut family_plan = plan.family.clone();
    if !family_plan.exclude.contains(&plan.target) {
        family_plan.exclude.push(plan.target.clone());
    }
    let (family, _) = plan_family(corpus, proxy, &seed_lines, &family_plan, alignment)?;
    let settings = LoopSettings {
        book_choice: BookChoice::Oracle,
        ..plan.settings.clone()
    };
    let mut workflow = Workflow::new(backend, corpus, proxy, &family, lexicon, settings)?;
    let mut state = workflow.start(&seed_lines)?;
    if state.is_complete() {
        return Ok(Vec::new());
    }
    let record = workflow.draft_step(&mut state)?;
    let mut order: Vec<(String, f64)> = record
        .ranking
        .into_iter()
        .map(|b| (b.book, b.report.score))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(order)
}

//! Translation backend contract.
//!
//! The workflow only talks to a [`TranslationBackend`]; [`LexicalBackend`]
//! is the reference implementation (EM-trained lexical table with a
//! monotone greedy decoder).

mod lexical;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_reserved_token, LanguageId};

pub use lexical::{LexicalBackend, LexicalConfig, TrainingTrace, TranslationModel, NULL_TOKEN};

pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("no training pairs with positive weight")]
    EmptyTrainingSet,
    #[error("model is untrained")]
    UntrainedModel,
    #[error("invalid training weight {0}")]
    InvalidWeight(f64),
    #[error("em_iterations must be at least 1")]
    NoIterations,
    #[error("malformed model file: {0}")]
    MalformedModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub weight: f64,
}

impl TrainingPair {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Self {
        Self {
            source,
            target,
            weight: 1.0,
        }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LanguagePair {
    pub source: LanguageId,
    pub target: LanguageId,
}

/// Invocation counters the workflow uses to check the pretraining guard.
#[derive(Debug, Default)]
pub struct BackendHooks {
    pretrain: AtomicU64,
    train: AtomicU64,
}

impl BackendHooks {
    pub fn pretrain_invocations(&self) -> u64 {
        self.pretrain.load(Ordering::SeqCst)
    }

    pub fn train_invocations(&self) -> u64 {
        self.train.load(Ordering::SeqCst)
    }

    pub(crate) fn record_pretrain(&self) {
        self.pretrain.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn record_train(&self) {
        self.train.fetch_add(1, Ordering::SeqCst);
    }
}

/// Whether retraining may grow the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabularyPolicy {
    /// Extend the vocabulary with unseen tokens, retrain from scratch.
    Updated,
    /// Map unseen tokens to `<unk>` so the vocabulary stays frozen.
    Frozen,
}

/// Source and target token sets known to a model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub source: BTreeSet<String>,
    pub target: BTreeSet<String>,
}

impl Vocabulary {
    pub fn from_pairs(pairs: &[TrainingPair]) -> Self {
        let mut vocab = Self::default();
        for p in pairs.iter().filter(|p| p.weight > 0.0) {
            vocab.source.extend(p.source.iter().cloned());
            vocab.target.extend(p.target.iter().cloned());
        }
        vocab
    }

    /// Replaces tokens outside the vocabulary with `<unk>`; reserved
    /// control tokens pass through.
    pub fn map_unknown(&self, pairs: &[TrainingPair]) -> Vec<TrainingPair> {
        let map = |tokens: &[String], known: &BTreeSet<String>| -> Vec<String> {
            tokens
                .iter()
                .map(|t| {
                    if known.contains(t) || is_reserved_token(t) {
                        t.clone()
                    } else {
                        UNK_TOKEN.to_owned()
                    }
                })
                .collect()
        };
        pairs
            .iter()
            .map(|p| TrainingPair {
                source: map(&p.source, &self.source),
                target: map(&p.target, &self.target),
                weight: p.weight,
            })
            .collect()
    }
}

/// A trainable translation system for one source→target direction.
pub trait TranslationBackend: Sync {
    type Model: Send + Sync;

    /// Trains from scratch, or from `init` mixed in with weight `init_weight`.
    fn train(
        &self,
        languages: &LanguagePair,
        pairs: &[TrainingPair],
        init: Option<(&Self::Model, f64)>,
    ) -> Result<Self::Model, BackendError>;

    /// Trains a prior on neighbouring-language data. The workflow passes the
    /// result as `init` to the following `train` with weight
    /// [`TranslationBackend::pretrain_weight`].
    fn pretrain(&self, neighbor_pairs: &[TrainingPair]) -> Result<Self::Model, BackendError>;

    fn pretrain_weight(&self) -> f64;

    fn translate(
        &self,
        model: &Self::Model,
        source: &[String],
    ) -> Result<Vec<String>, BackendError>;

    fn vocabulary(&self, model: &Self::Model) -> Vocabulary;

    /// Retrains on the full accumulated pair set under a vocabulary policy.
    fn update_vocabulary(
        &self,
        model: &Self::Model,
        accumulated: &[TrainingPair],
        policy: VocabularyPolicy,
    ) -> Result<Self::Model, BackendError>;

    fn hooks(&self) -> &BackendHooks;
}

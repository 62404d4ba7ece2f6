//! Order-preserving named-entity placeholders and language labels.
//!
//! Entity mentions found in a multilingual lexicon are replaced by
//! `__NE0`, `__NE1`, ... in left-to-right order before translation and are
//! restored afterwards in the target language's preferred surface form.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_reserved_token, placeholder_ordinal, tokenize, CorpusError, LanguageId};

pub const SOURCE_LABEL_PREFIX: &str = "__opt_src_";
pub const TARGET_LABEL_PREFIX: &str = "__opt_tgt_";

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("{0}")]
    Io(String),
    #[error("lexicon row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("language {0} has no lexicon entries")]
    UnknownLanguage(String),
    #[error("placeholder __NE{0} has no binding")]
    DanglingPlaceholder(usize),
    #[error("sentence already carries language labels")]
    AlreadyLabeled,
    #[error("reserved token {0:?} in input sentence")]
    ReservedToken(String),
    #[error(transparent)]
    Language(#[from] CorpusError),
}

pub fn placeholder(ordinal: usize) -> String {
    format!("__NE{ordinal}")
}

pub fn is_label_token(token: &str) -> bool {
    token.starts_with("__opt_")
}

/// Entity id → language → surface forms (first form preferred).
#[derive(Debug, Clone, Default)]
pub struct LexiconTable {
    entries: BTreeMap<u32, BTreeMap<LanguageId, Vec<Vec<String>>>>,
    // language → first token → (form, entity), longest form first, then lowest id
    matcher: HashMap<LanguageId, HashMap<String, Vec<(Vec<String>, u32)>>>,
}

impl LexiconTable {
    pub fn from_entries<I, S>(rows: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (u32, LanguageId, S)>,
        S: AsRef<str>,
    {
        let mut table = Self::default();
        for (row, (id, lang, surface)) in rows.into_iter().enumerate() {
            table.insert(row + 1, id, lang, surface.as_ref())?;
        }
        table.rebuild_matcher();
        Ok(table)
    }

    /// Parses `entity_id<TAB>language<TAB>surface` rows.
    pub fn parse_tsv(text: &str) -> Result<Self, LexiconError> {
        let mut table = Self::default();
        for (i, line) in text.lines().enumerate() {
            let row = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(3, '\t').collect();
            if fields.len() != 3 {
                return Err(LexiconError::Malformed {
                    row,
                    reason: "expected entity_id<TAB>language<TAB>surface".into(),
                });
            }
            let id = fields[0]
                .trim()
                .parse::<u32>()
                .map_err(|_| LexiconError::Malformed {
                    row,
                    reason: format!("bad entity id {:?}", fields[0]),
                })?;
            let lang = LanguageId::new(fields[1])?;
            table.insert(row, id, lang, fields[2])?;
        }
        table.rebuild_matcher();
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LexiconError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, langs) in &self.entries {
            for (lang, forms) in langs {
                for form in forms {
                    out.push_str(&format!("{id}\t{lang}\t{}\n", form.join(" ")));
                }
            }
        }
        out
    }

    fn insert(
        &mut self,
        row: usize,
        id: u32,
        lang: LanguageId,
        surface: &str,
    ) -> Result<(), LexiconError> {
        let form = tokenize(surface);
        if form.is_empty() {
            return Err(LexiconError::Malformed {
                row,
                reason: "empty surface form".into(),
            });
        }
        if let Some(tok) = form.iter().find(|t| is_reserved_token(t)) {
            return Err(LexiconError::Malformed {
                row,
                reason: format!("reserved token {tok:?} in surface form"),
            });
        }
        let forms = self.entries.entry(id).or_default().entry(lang).or_default();
        if !forms.contains(&form) {
            forms.push(form);
        }
        Ok(())
    }

    fn rebuild_matcher(&mut self) {
        self.matcher.clear();
        for (&id, langs) in &self.entries {
            for (lang, forms) in langs {
                let by_first = self.matcher.entry(lang.clone()).or_default();
                for form in forms {
                    by_first
                        .entry(form[0].clone())
                        .or_default()
                        .push((form.clone(), id));
                }
            }
        }
        for by_first in self.matcher.values_mut() {
            for candidates in by_first.values_mut() {
                candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
            }
        }
    }

    pub fn has_language(&self, lang: &LanguageId) -> bool {
        self.matcher.contains_key(lang)
    }

    pub fn entity_count(&self) -> usize {
        self.entries.len()
    }

    pub fn preferred_form(&self, entity_id: u32, lang: &LanguageId) -> Option<&[String]> {
        self.entries
            .get(&entity_id)?
            .get(lang)?
            .first()
            .map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub ordinal: usize,
    pub entity_id: u32,
    pub surface: Vec<String>,
}

/// A token sequence with entity mentions replaced by placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub source_language: LanguageId,
    pub tokens: Vec<String>,
    pub bindings: Vec<Binding>,
}

impl TaggedSentence {
    /// Same bindings over a different token sequence, e.g. a translation.
    pub fn with_tokens(&self, tokens: Vec<String>) -> Self {
        Self {
            source_language: self.source_language.clone(),
            tokens,
            bindings: self.bindings.clone(),
        }
    }

    pub fn placeholder_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| placeholder_ordinal(t).is_some())
            .count()
    }
}

/// Greedy left-to-right longest-match tagging; ties go to the lowest id.
pub fn tag_entities(
    sentence: &[String],
    lexicon: &LexiconTable,
    language: &LanguageId,
) -> Result<TaggedSentence, LexiconError> {
    let by_first = lexicon
        .matcher
        .get(language)
        .ok_or_else(|| LexiconError::UnknownLanguage(language.to_string()))?;
    if let Some(tok) = sentence.iter().find(|t| is_reserved_token(t)) {
        return Err(LexiconError::ReservedToken(tok.clone()));
    }
    let mut tokens = Vec::with_capacity(sentence.len());
    let mut bindings = Vec::new();
    let mut pos = 0;
    while pos < sentence.len() {
        let hit = by_first.get(&sentence[pos]).and_then(|candidates| {
            candidates
                .iter()
                .find(|(form, _)| sentence[pos..].starts_with(form))
        });
        match hit {
            Some((form, id)) => {
                let ordinal = bindings.len();
                tokens.push(placeholder(ordinal));
                bindings.push(Binding {
                    ordinal,
                    entity_id: *id,
                    surface: form.clone(),
                });
                pos += form.len();
            }
            None => {
                tokens.push(sentence[pos].clone());
                pos += 1;
            }
        }
    }
    Ok(TaggedSentence {
        source_language: language.clone(),
        tokens,
        bindings,
    })
}

fn surface_for<'a>(
    binding: &'a Binding,
    source: &LanguageId,
    target: &LanguageId,
    lexicon: &'a LexiconTable,
) -> &'a [String] {
    if source == target {
        return &binding.surface;
    }
    lexicon
        .preferred_form(binding.entity_id, target)
        .unwrap_or(&binding.surface)
}

/// Replaces each placeholder by the target language's preferred form of its
/// entity, falling back to the source surface. Restoring into the tagging
/// language reproduces the original mention exactly.
pub fn restore_entities(
    tagged: &TaggedSentence,
    target_language: &LanguageId,
    lexicon: &LexiconTable,
) -> Result<Vec<String>, LexiconError> {
    let mut out = Vec::with_capacity(tagged.tokens.len());
    for tok in &tagged.tokens {
        match placeholder_ordinal(tok) {
            Some(ordinal) => {
                let binding = tagged
                    .bindings
                    .get(ordinal)
                    .filter(|b| b.ordinal == ordinal)
                    .ok_or(LexiconError::DanglingPlaceholder(ordinal))?;
                out.extend_from_slice(surface_for(
                    binding,
                    &tagged.source_language,
                    target_language,
                    lexicon,
                ));
            }
            None => out.push(tok.clone()),
        }
    }
    Ok(out)
}

/// Counts placeholders dropped by [`restore_entities_lenient`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreDiagnostics {
    pub dropped_placeholders: usize,
}

/// Like [`restore_entities`] but drops unbound placeholders a backend may
/// have emitted instead of failing.
pub fn restore_entities_lenient(
    tagged: &TaggedSentence,
    target_language: &LanguageId,
    lexicon: &LexiconTable,
) -> (Vec<String>, RestoreDiagnostics) {
    let mut diag = RestoreDiagnostics::default();
    let mut out = Vec::with_capacity(tagged.tokens.len());
    for tok in &tagged.tokens {
        match placeholder_ordinal(tok) {
            Some(ordinal) => match tagged
                .bindings
                .get(ordinal)
                .filter(|b| b.ordinal == ordinal)
            {
                Some(binding) => out.extend_from_slice(surface_for(
                    binding,
                    &tagged.source_language,
                    target_language,
                    lexicon,
                )),
                None => diag.dropped_placeholders += 1,
            },
            None => out.push(tok.clone()),
        }
    }
    (out, diag)
}

pub fn source_label(lang: &LanguageId) -> String {
    format!("{SOURCE_LABEL_PREFIX}{lang}")
}

pub fn target_label(lang: &LanguageId) -> String {
    format!("{TARGET_LABEL_PREFIX}{lang}")
}

/// Prepends `__opt_src_<source> __opt_tgt_<target>`.
pub fn prefix_language_labels(
    tokens: &[String],
    source: &LanguageId,
    target: &LanguageId,
) -> Result<Vec<String>, LexiconError> {
    if tokens.iter().any(|t| is_label_token(t)) {
        return Err(LexiconError::AlreadyLabeled);
    }
    let mut out = Vec::with_capacity(tokens.len() + 2);
    out.push(source_label(source));
    out.push(target_label(target));
    out.extend_from_slice(tokens);
    Ok(out)
}

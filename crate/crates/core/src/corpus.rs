//! Line-aligned multilingual closed text with book structure.
//!
//! A corpus is described by a TOML manifest:
//!
//! ```toml
//! book_index = "books.tsv"
//! split_seed = 17
//!
//! [languages]
//! en = "en.txt"
//! de = "de.txt"
//! ```
//!
//! Every language file holds one sentence per line, aligned by line number.
//! The book index is a TSV of `name<TAB>start<TAB>end` rows (0-based,
//! end-exclusive) that must partition `[0, N)`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Books shorter than this are merged into a neighbour at load.
pub const MIN_BOOK_LINES: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("invalid language code {0:?}")]
    InvalidLanguage(String),
    #[error("duplicate language {0}")]
    DuplicateLanguage(String),
    #[error("language {lang} has {got} lines, expected {expected}")]
    MismatchedLineCount {
        lang: String,
        expected: usize,
        got: usize,
    },
    #[error("corpus has no lines")]
    EmptyCorpus,
    #[error("malformed book index: {0}")]
    MalformedBookIndex(String),
    #[error("reserved token {token:?} in language {lang}, line {line}")]
    ReservedToken {
        lang: String,
        line: usize,
        token: String,
    },
    #[error("unknown book {0:?}")]
    UnknownBook(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("seed line {index} is outside the corpus of {n} lines")]
    SeedOutOfRange { index: usize, n: usize },
    #[error("seed has {0} lines, at least 2 are required")]
    DegenerateSeed(usize),
    #[error("validation fraction {0} is not in (0, 1)")]
    InvalidFraction(f64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Case-normalized language code.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: &str) -> Result<Self, CorpusError> {
        let code = code.trim().to_lowercase();
        if code.is_empty() || code.chars().any(|c| c.is_whitespace()) {
            return Err(CorpusError::InvalidLanguage(code));
        }
        Ok(Self(code))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageId {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<LanguageId> for String {
    fn from(value: LanguageId) -> Self {
        value.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LanguageId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// NFC-normalize a line and split it on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    let normalized: String = line.nfc().collect();
    normalized.split_whitespace().map(str::to_owned).collect()
}

/// Control tokens: entity placeholders `__NE<digits>` and `__opt_*` labels.
pub fn is_reserved_token(token: &str) -> bool {
    token.starts_with("__opt_") || is_placeholder(token)
}

/// True for `__NE0`, `__NE1`, ...
pub fn is_placeholder(token: &str) -> bool {
    placeholder_ordinal(token).is_some()
}

pub fn placeholder_ordinal(token: &str) -> Option<usize> {
    let digits = token.strip_prefix("__NE")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Book {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Book {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn lines(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Ordered, contiguous partition of `[0, N)` into named books.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookIndex {
    books: Vec<Book>,
}

impl BookIndex {
    /// Validates that `books` partitions `[0, n)` in order with unique names.
    pub fn new(books: Vec<Book>, n: usize) -> Result<Self, CorpusError> {
        if books.is_empty() {
            return Err(CorpusError::MalformedBookIndex("no books".into()));
        }
        let mut names = HashSet::new();
        let mut expected_start = 0;
        for book in &books {
            if book.name.is_empty() {
                return Err(CorpusError::MalformedBookIndex("empty book name".into()));
            }
            if !names.insert(book.name.as_str()) {
                return Err(CorpusError::MalformedBookIndex(format!(
                    "duplicate book {:?}",
                    book.name
                )));
            }
            if book.start != expected_start {
                let what = if book.start > expected_start {
                    "gap"
                } else {
                    "overlap"
                };
                return Err(CorpusError::MalformedBookIndex(format!(
                    "{what} before book {:?}: starts at {}, expected {}",
                    book.name, book.start, expected_start
                )));
            }
            if book.end <= book.start {
                return Err(CorpusError::MalformedBookIndex(format!(
                    "book {:?} has an empty range [{}, {})",
                    book.name, book.start, book.end
                )));
            }
            expected_start = book.end;
        }
        if expected_start != n {
            return Err(CorpusError::MalformedBookIndex(format!(
                "books cover [0, {expected_start}) but the corpus has {n} lines"
            )));
        }
        Ok(Self { books })
    }

    pub fn parse_tsv(text: &str, n: usize) -> Result<Self, CorpusError> {
        let mut books = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(CorpusError::MalformedBookIndex(format!(
                    "row {}: expected 3 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|_| {
                    CorpusError::MalformedBookIndex(format!(
                        "row {}: {s:?} is not a line index",
                        lineno + 1
                    ))
                })
            };
            books.push(Book {
                name: fields[0].trim().to_owned(),
                start: parse(fields[1])?,
                end: parse(fields[2])?,
            });
        }
        Self::new(books, n)
    }

    pub fn to_tsv(&self) -> String {
        self.books
            .iter()
            .map(|b| format!("{}\t{}\t{}\n", b.name, b.start, b.end))
            .collect()
    }

    /// Merges books shorter than `min_lines` into the following book (or the
    /// preceding one for a short final book). Merged names are joined by `+`.
    pub fn merge_small_books(self, min_lines: usize) -> Self {
        let mut books = self.books;
        let mut i = 0;
        while books.len() > 1 && i < books.len() {
            if books[i].len() >= min_lines {
                i += 1;
                continue;
            }
            let (keep, drop) = if i + 1 < books.len() {
                (i, i + 1)
            } else {
                (i - 1, i)
            };
            let dropped = books.remove(drop);
            let kept = &mut books[keep];
            kept.name = format!("{}+{}", kept.name, dropped.name);
            kept.end = dropped.end;
            i = keep;
        }
        Self { books }
    }

    pub fn books(&self) -> &[Book] {
        &self.books
    }

    pub fn get(&self, name: &str) -> Option<&Book> {
        self.books.iter().find(|b| b.name == name)
    }

    pub fn n_total(&self) -> usize {
        self.books.last().map_or(0, |b| b.end)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    book_index: PathBuf,
    split_seed: u64,
    languages: BTreeMap<String, PathBuf>,
}

/// Immutable multilingual line-aligned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    lines: BTreeMap<LanguageId, Vec<Vec<String>>>,
    book_index: BookIndex,
    split_seed: u64,
}

impl ParallelCorpus {
    /// Builds a corpus from in-memory token lines, applying the same
    /// validation as [`ParallelCorpus::load`].
    pub fn new(
        lines: BTreeMap<LanguageId, Vec<Vec<String>>>,
        book_index: BookIndex,
        split_seed: u64,
    ) -> Result<Self, CorpusError> {
        let n = book_index.n_total();
        if n == 0 || lines.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        for (lang, rows) in &lines {
            if rows.len() != n {
                return Err(CorpusError::MismatchedLineCount {
                    lang: lang.to_string(),
                    expected: n,
                    got: rows.len(),
                });
            }
            for (i, row) in rows.iter().enumerate() {
                if let Some(tok) = row.iter().find(|t| is_reserved_token(t)) {
                    return Err(CorpusError::ReservedToken {
                        lang: lang.to_string(),
                        line: i,
                        token: tok.clone(),
                    });
                }
            }
        }
        Ok(Self {
            lines,
            book_index: book_index.merge_small_books(MIN_BOOK_LINES),
            split_seed,
        })
    }

    /// Loads and validates the corpus described by a manifest file.
    /// Paths inside the manifest are relative to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));

        let mut lines = BTreeMap::new();
        let mut expected: Option<(String, usize)> = None;
        for (code, rel) in &manifest.languages {
            let lang = LanguageId::new(code)?;
            if lines.contains_key(&lang) {
                return Err(CorpusError::DuplicateLanguage(lang.to_string()));
            }
            let path = root.join(rel);
            let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
            let rows: Vec<Vec<String>> = raw.lines().map(tokenize).collect();
            match &expected {
                None => expected = Some((lang.to_string(), rows.len())),
                Some((_, n)) if *n != rows.len() => {
                    return Err(CorpusError::MismatchedLineCount {
                        lang: lang.to_string(),
                        expected: *n,
                        got: rows.len(),
                    })
                }
                _ => {}
            }
            lines.insert(lang, rows);
        }
        let n = match expected {
            Some((_, n)) if n > 0 => n,
            _ => return Err(CorpusError::EmptyCorpus),
        };
        let index_path = root.join(&manifest.book_index);
        let index_text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        let book_index = BookIndex::parse_tsv(&index_text, n)?;
        Self::new(lines, book_index, manifest.split_seed)
    }

    /// Writes `<code>.txt` per language, `books.tsv` and `manifest.toml`
    /// into `dir`; returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut manifest = format!(
            "book_index = \"books.tsv\"\nsplit_seed = {}\n\n[languages]\n",
            self.split_seed
        );
        for (lang, rows) in &self.lines {
            let file = format!("{lang}.txt");
            let mut body = String::new();
            for row in rows {
                body.push_str(&row.join(" "));
                body.push('\n');
            }
            let path = dir.join(&file);
            fs::write(&path, body).map_err(io_err(&path))?;
            manifest.push_str(&format!("{lang} = \"{file}\"\n"));
        }
        let books = dir.join("books.tsv");
        fs::write(&books, self.book_index.to_tsv()).map_err(io_err(&books))?;
        let path = dir.join("manifest.toml");
        fs::write(&path, manifest).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn n_total(&self) -> usize {
        self.book_index.n_total()
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed
    }

    pub fn book_index(&self) -> &BookIndex {
        &self.book_index
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageId> + '_ {
        self.lines.keys()
    }

    pub fn has_language(&self, lang: &LanguageId) -> bool {
        self.lines.contains_key(lang)
    }

    pub fn text(&self, lang: &LanguageId) -> Result<&[Vec<String>], CorpusError> {
        self.lines
            .get(lang)
            .map(Vec::as_slice)
            .ok_or_else(|| CorpusError::UnknownLanguage(lang.to_string()))
    }

    /// Panics if the language or line is absent; callers validate first.
    pub fn line(&self, lang: &LanguageId, index: usize) -> &[String] {
        &self.lines[lang][index]
    }

    pub fn lines_of_book(&self, book_name: &str) -> Result<Vec<usize>, CorpusError> {
        self.book_index
            .get(book_name)
            .map(|b| b.lines().collect())
            .ok_or_else(|| CorpusError::UnknownBook(book_name.to_owned()))
    }

    /// Splits the human-translated seed into train and validation; everything
    /// else is test. Validation is the tail of a shuffle keyed by the
    /// manifest's split seed.
    pub fn make_split(
        &self,
        seed_lines: &BTreeSet<usize>,
        validation_fraction: f64,
    ) -> Result<SplitAssignment, CorpusError> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(CorpusError::InvalidFraction(validation_fraction));
        }
        let n = self.n_total();
        if let Some(&index) = seed_lines.iter().next_back().filter(|&&i| i >= n) {
            return Err(CorpusError::SeedOutOfRange { index, n });
        }
        if seed_lines.len() < 2 {
            return Err(CorpusError::DegenerateSeed(seed_lines.len()));
        }
        let mut order: Vec<usize> = seed_lines.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.split_seed);
        order.shuffle(&mut rng);
        let size =
            ((validation_fraction * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
        let validation: BTreeSet<usize> = order[order.len() - size..].iter().copied().collect();
        let train = seed_lines.difference(&validation).copied().collect();
        let test = (0..n).filter(|i| !seed_lines.contains(i)).collect();
        Ok(SplitAssignment {
            train,
            validation,
            test,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<usize>,
    pub validation: BTreeSet<usize>,
    pub test: BTreeSet<usize>,
}

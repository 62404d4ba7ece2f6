//! Experiment configuration files.
//!
//! A config is a TOML document; relative paths are resolved against the
//! directory holding the file:
//!
//! ```toml
//! corpus = "corpus/manifest.txt"
//! target = "l00"
//! max_iterations = 3
//! output_dir = "runs"
//!
//! [selection]
//! kind = "random_sample"
//! size = 1000
//! rng_seed = 7
//!
//! [family]
//! method = "distortion"
//! k = 3
//!
//! [loop]
//! update = "updated_vocab"
//!
//! [backend]
//! em_iterations = 10
//! ```
//!
//! Validation reports every problem at once, each tagged with the dotted
//! path of the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::LexicalConfig;
use crate::corpus::LanguageId;
use crate::family::FamilyMethod;
use crate::workflow::{BookChoice, ExperimentPlan, FamilyPlan, LoopSettings, SelectionStrategy};

/// One problem with a config, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    pub fn fields(&self) -> &[FieldError] {
        match self {
            ConfigError::Invalid(errors) => errors,
            ConfigError::Io { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Corpus manifest.
    pub corpus: PathBuf,
    /// Optional named-entity lexicon TSV.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub target: String,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Root under which the run directory is created.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Full-text language standing in for the target to fix the
    /// post-editing order; the target's references then only score drafts.
    #[serde(default)]
    pub proxy: Option<String>,
    pub selection: SelectionStrategy,
    pub family: FamilyConfig,
    #[serde(default, rename = "loop")]
    pub settings: LoopSettings,
    #[serde(default)]
    pub backend: LexicalConfig,
}

fn default_max_iterations() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Family section as written; language codes stay strings until validation
/// so that bad codes are reported with their path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub method: FamilyMethod,
    pub k: usize,
    #[serde(default)]
    pub languages: Option<Vec<String>>,
    #[serde(default)]
    pub exclude: Vec<String>,
}

impl ExperimentConfig {
    /// Parses and validates config text.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_path_to_error::deserialize(toml::Deserializer::new(text))
            .map_err(|e| {
                let field = e.path().to_string();
                let message = e.into_inner().message().trim().to_owned();
                ConfigError::Invalid(vec![FieldError {
                    field: if field == "." { "(root)".into() } else { field },
                    message,
                }])
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file, returning it as written (relative paths
    /// unresolved, so its hash does not depend on where it lives) together
    /// with the raw text. Resolve with [`ExperimentConfig::resolved`].
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok((Self::parse(&text)?, text))
    }

    /// Copy with relative paths joined onto `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let join = |p: &Path| {
            if p.is_absolute() {
                p.to_owned()
            } else {
                base.join(p)
            }
        };
        Self {
            corpus: join(&self.corpus),
            lexicon: self.lexicon.as_deref().map(join),
            output_dir: join(&self.output_dir),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut err = |field: &str, message: String| {
            errors.push(FieldError {
                field: field.to_owned(),
                message,
            })
        };
        if let Err(e) = LanguageId::new(&self.target) {
            err("target", e.to_string());
        }
        if let Some(proxy) = &self.proxy {
            if let Err(e) = LanguageId::new(proxy) {
                err("proxy", e.to_string());
            } else if proxy.trim().to_lowercase() == self.target.trim().to_lowercase() {
                err("proxy", "must differ from target".into());
            }
        }
        if self.corpus.as_os_str().is_empty() {
            err("corpus", "must name a manifest file".into());
        }
        match &self.selection {
            SelectionStrategy::RandomSample { size: 0, .. } => {
                err("selection.size", "must be at least 1".into())
            }
            SelectionStrategy::Portion { book } if book.is_empty() => {
                err("selection.book", "must not be empty".into())
            }
            _ => {}
        }
        if self.family.k == 0 {
            err("family.k", "must be at least 1".into());
        }
        match (&self.family.method, &self.family.languages) {
            (FamilyMethod::Linguistic, None) => err(
                "family.languages",
                "required for the linguistic method".into(),
            ),
            (_, Some(list)) => {
                for (i, code) in list.iter().enumerate() {
                    if let Err(e) = LanguageId::new(code) {
                        err(&format!("family.languages[{i}]"), e.to_string());
                    }
                }
            }
            _ => {}
        }
        for (i, code) in self.family.exclude.iter().enumerate() {
            if let Err(e) = LanguageId::new(code) {
                err(&format!("family.exclude[{i}]"), e.to_string());
            }
        }
        let s = &self.settings;
        if !(s.multi_source_weight > 0.0 && s.multi_source_weight.is_finite()) {
            err("loop.multi_source_weight", "must be positive".into());
        }
        if !(s.pseudo_weight >= 0.0 && s.pseudo_weight.is_finite()) {
            err("loop.pseudo_weight", "must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&s.post_edit_noise) {
            err("loop.post_edit_noise", "must lie in [0, 1]".into());
        }
        if self.proxy.is_some() && s.book_choice != BookChoice::Oracle {
            err("loop.book_choice", "cannot be combined with proxy".into());
        }
        let b = &self.backend;
        if b.em_iterations == 0 {
            err("backend.em_iterations", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&b.pretrain_weight) {
            err("backend.pretrain_weight", "must lie in [0, 1]".into());
        }
        if !(b.null_floor >= 0.0 && b.null_floor < 1.0) {
            err("backend.null_floor", "must lie in [0, 1)".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn target_language(&self) -> LanguageId {
        LanguageId::new(&self.target).expect("validated")
    }

    pub fn proxy_language(&self) -> Option<LanguageId> {
        self.proxy
            .as_deref()
            .map(|p| LanguageId::new(p).expect("validated"))
    }

    pub fn plan(&self) -> ExperimentPlan {
        let ids = |codes: &[String]| -> Vec<LanguageId> {
            codes
                .iter()
                .map(|c| LanguageId::new(c).expect("validated"))
                .collect()
        };
        ExperimentPlan {
            target: self.target_language(),
            selection: self.selection.clone(),
            family: FamilyPlan {
                method: self.family.method,
                k: self.family.k,
                linguistic_list: self.family.languages.as_deref().map(ids),
                exclude: ids(&self.family.exclude),
            },
            settings: self.settings.clone(),
            max_iterations: self.max_iterations,
        }
    }

    /// Hex SHA-256 of the config's canonical JSON form. Formatting and
    /// comments in the source file do not affect it; the output directory
    /// does not either, so moving the output root keeps run names.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }

    /// `run-` plus the first 12 hex digits of [`ExperimentConfig::hash`].
    pub fn run_name(&self) -> String {
        format!("run-{}", &self.hash()[..12])
    }
}

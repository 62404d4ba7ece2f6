use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendError, BackendHooks, LanguagePair, TrainingPair, TranslationBackend, Vocabulary,
    VocabularyPolicy, UNK_TOKEN,
};
use crate::corpus::{is_placeholder, LanguageId};
use crate::lexicon::is_label_token;

/// Empty word. As a source it is the alignment null; as a target it is the
/// "translates to nothing" outcome.
pub const NULL_TOKEN: &str = "<null>";

const MODEL_MAGIC: &str = "# lowres-lexical-model v1";
// Keeps every initial entry reachable by EM.
const INIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexicalConfig {
    pub em_iterations: usize,
    pub seed: u64,
    /// Mixing weight of a pretrained prior in the EM initialization.
    pub pretrain_weight: f64,
    /// Lower bound on the null source's probability in alignment decisions.
    pub null_floor: f64,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        Self {
            em_iterations: 20,
            seed: 0,
            pretrain_weight: 0.5,
            null_floor: 1e-4,
        }
    }
}

/// Per-iteration diagnostics recorded during EM.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Weighted corpus log-likelihood before each M-step, plus once at the end.
    pub log_likelihood: Vec<f64>,
    /// Largest `|Σ_t t(t|s) − 1|` after each M-step.
    pub max_row_error: Vec<f64>,
}

/// Lexical translation table `t(target | source)` with a null source row
/// and a null target column.
#[derive(Debug, Clone)]
pub struct TranslationModel {
    pub languages: LanguagePair,
    pub version: u64,
    pub em_iterations: usize,
    pub seed: u64,
    null_floor: f64,
    source_vocab: Vec<String>,
    source_ids: HashMap<String, u32>,
    target_vocab: Vec<String>,
    target_ids: HashMap<String, u32>,
    // indexed by source id, sorted by target id
    rows: Vec<Vec<(u32, f64)>>,
    // argmax target per source row; `None` means no usable target
    best: Vec<Option<u32>>,
    trace: TrainingTrace,
}

impl PartialEq for TranslationModel {
    fn eq(&self, other: &Self) -> bool {
        self.languages == other.languages
            && self.source_vocab == other.source_vocab
            && self.target_vocab == other.target_vocab
            && self.rows == other.rows
    }
}

impl TranslationModel {
    fn from_parts(
        languages: LanguagePair,
        version: u64,
        config: &LexicalConfig,
        source_vocab: Vec<String>,
        target_vocab: Vec<String>,
        rows: Vec<Vec<(u32, f64)>>,
        trace: TrainingTrace,
    ) -> Self {
        let index = |v: &[String]| {
            v.iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect()
        };
        let mut model = Self {
            languages,
            version,
            em_iterations: config.em_iterations,
            seed: config.seed,
            null_floor: config.null_floor,
            source_ids: index(&source_vocab),
            target_ids: index(&target_vocab),
            source_vocab,
            target_vocab,
            rows,
            best: Vec::new(),
            trace,
        };
        model.best = (0..model.rows.len()).map(|s| model.argmax_row(s)).collect();
        model
    }

    fn argmax_row(&self, s: usize) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for &(t, p) in &self.rows[s] {
            let token = &self.target_vocab[t as usize];
            if token == UNK_TOKEN || is_placeholder(token) {
                continue;
            }
            // Rows are sorted by id, so the null target (id 0) comes first
            // and any real target tying with it takes over.
            let better = match best {
                None => true,
                Some((bt, bp)) => {
                    p > bp || (p == bp && (bt == 0 || *token < self.target_vocab[bt as usize]))
                }
            };
            if better {
                best = Some((t, p));
            }
        }
        best.map(|(t, _)| t)
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    pub fn null_floor(&self) -> f64 {
        self.null_floor
    }

    pub fn knows_source(&self, token: &str) -> bool {
        token != NULL_TOKEN && self.source_ids.contains_key(token)
    }

    /// Known source tokens, excluding the null source.
    pub fn source_tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.source_vocab.iter().skip(1).map(String::as_str)
    }

    /// Known target tokens, excluding the null target.
    pub fn target_tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.target_vocab.iter().skip(1).map(String::as_str)
    }

    /// `t(target | source)`, 0 for pairs outside the table. Use
    /// [`NULL_TOKEN`] for either side's empty word.
    pub fn prob(&self, source: &str, target: &str) -> f64 {
        let (Some(&s), Some(&t)) = (self.source_ids.get(source), self.target_ids.get(target))
        else {
            return 0.0;
        };
        let row = &self.rows[s as usize];
        row.binary_search_by_key(&t, |&(id, _)| id)
            .map(|k| row[k].1)
            .unwrap_or(0.0)
    }

    /// Null-source probability of `target`, floored.
    pub fn null_prob(&self, target: &str) -> f64 {
        self.prob(NULL_TOKEN, target).max(self.null_floor)
    }

    /// Sum of a source row including null-target mass; `None` if unknown.
    pub fn row_sum(&self, source: &str) -> Option<f64> {
        let &s = self.source_ids.get(source)?;
        Some(self.rows[s as usize].iter().map(|&(_, p)| p).sum())
    }

    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Best translation of a known source token: `Some(None)` means the
    /// null target wins.
    pub fn best_target(&self, source: &str) -> Option<Option<&str>> {
        let &s = self.source_ids.get(source)?;
        let t = self.best[s as usize]?;
        Some((t != 0).then(|| self.target_vocab[t as usize].as_str()))
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            source: self.source_tokens().map(str::to_owned).collect(),
            target: self.target_tokens().map(str::to_owned).collect(),
        }
    }

    pub fn vocabulary_hash(&self) -> String {
        let mut src: Vec<&str> = self.source_tokens().collect();
        let mut tgt: Vec<&str> = self.target_tokens().collect();
        src.sort_unstable();
        tgt.sort_unstable();
        let mut hasher = Sha256::new();
        hasher.update(src.join("\n"));
        hasher.update("\t");
        hasher.update(tgt.join("\n"));
        format!("{:x}", hasher.finalize())
    }

    /// `source<TAB>target<TAB>prob` rows behind a `# key=value` header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC}");
        let _ = writeln!(out, "# source_language={}", self.languages.source);
        let _ = writeln!(out, "# target_language={}", self.languages.target);
        let _ = writeln!(out, "# version={}", self.version);
        let _ = writeln!(out, "# em_iterations={}", self.em_iterations);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# null_floor={}", self.null_floor);
        let _ = writeln!(out, "# vocab_hash={}", self.vocabulary_hash());
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.source_vocab[s], self.target_vocab[t as usize], p
                );
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, BackendError> {
        let bad = |m: String| BackendError::MalformedModel(m);
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(bad("missing model header".into()));
        }
        let mut header = HashMap::new();
        let mut source_vocab = vec![NULL_TOKEN.to_owned()];
        let mut target_vocab = vec![NULL_TOKEN.to_owned()];
        let mut source_ids: HashMap<String, u32> = HashMap::from([(NULL_TOKEN.to_owned(), 0)]);
        let mut target_ids: HashMap<String, u32> = HashMap::from([(NULL_TOKEN.to_owned(), 0)]);
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new()];
        for (k, line) in lines.enumerate() {
            if let Some(kv) = line.strip_prefix("# ") {
                let (key, value) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("header {kv:?}")))?;
                header.insert(key.to_owned(), value.to_owned());
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("row {}: expected 3 fields", k + 2)));
            }
            let p: f64 = fields[2]
                .parse()
                .map_err(|_| bad(format!("row {}: bad probability", k + 2)))?;
            let s = *source_ids.entry(fields[0].to_owned()).or_insert_with(|| {
                source_vocab.push(fields[0].to_owned());
                rows.push(Vec::new());
                (source_vocab.len() - 1) as u32
            });
            let t = *target_ids.entry(fields[1].to_owned()).or_insert_with(|| {
                target_vocab.push(fields[1].to_owned());
                (target_vocab.len() - 1) as u32
            });
            rows[s as usize].push((t, p));
        }
        for row in &mut rows {
            row.sort_by_key(|&(t, _)| t);
        }
        let get = |key: &str| {
            header
                .get(key)
                .ok_or_else(|| bad(format!("missing header {key}")))
        };
        let lang = |key: &str| -> Result<LanguageId, BackendError> {
            LanguageId::new(get(key)?).map_err(|e| bad(e.to_string()))
        };
        let num = |key: &str| -> Result<f64, BackendError> {
            get(key)?
                .parse::<f64>()
                .map_err(|_| bad(format!("header {key}")))
        };
        let config = LexicalConfig {
            em_iterations: num("em_iterations")? as usize,
            seed: get("seed")?
                .parse()
                .map_err(|_| bad("header seed".into()))?,
            pretrain_weight: 0.0,
            null_floor: num("null_floor")?,
        };
        let languages = LanguagePair {
            source: lang("source_language")?,
            target: lang("target_language")?,
        };
        let version = get("version")?
            .parse()
            .map_err(|_| bad("header version".into()))?;
        let model = Self::from_parts(
            languages,
            version,
            &config,
            source_vocab,
            target_vocab,
            rows,
            TrainingTrace::default(),
        );
        if get("vocab_hash")? != &model.vocabulary_hash() {
            return Err(bad("vocabulary hash mismatch".into()));
        }
        Ok(model)
    }
}

struct Interner {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn new() -> Self {
        Self {
            tokens: vec![NULL_TOKEN.to_owned()],
            ids: HashMap::from([(NULL_TOKEN.to_owned(), 0)]),
        }
    }

    fn id(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.ids.insert(token.to_owned(), id);
        id
    }
}

/// One sentence pair as a grid of parameter ids: `params[j * sources + i]`
/// for target position `j` (last = null target) and source position `i`
/// (first = null source).
struct PairGrid {
    weight: f64,
    sources: usize,
    params: Vec<u32>,
}

struct EmProblem {
    pairs: Vec<PairGrid>,
    param_source: Vec<u32>,
    param_target: Vec<u32>,
    source: Interner,
    target: Interner,
}

impl EmProblem {
    fn build(pairs: &[TrainingPair]) -> Self {
        let mut source = Interner::new();
        let mut target = Interner::new();
        let mut param_ids: HashMap<(u32, u32), u32> = HashMap::new();
        let mut param_source = Vec::new();
        let mut param_target = Vec::new();
        let mut grids = Vec::with_capacity(pairs.len());
        for pair in pairs.iter().filter(|p| p.weight > 0.0) {
            let src: Vec<u32> = std::iter::once(0)
                .chain(pair.source.iter().map(|t| source.id(t)))
                .collect();
            let tgt: Vec<u32> = pair
                .target
                .iter()
                .map(|t| target.id(t))
                .chain(std::iter::once(0))
                .collect();
            let mut params = Vec::with_capacity(src.len() * tgt.len());
            for &t in &tgt {
                for &s in &src {
                    let next = param_source.len() as u32;
                    let id = *param_ids.entry((s, t)).or_insert_with(|| {
                        param_source.push(s);
                        param_target.push(t);
                        next
                    });
                    params.push(id);
                }
            }
            grids.push(PairGrid {
                weight: pair.weight,
                sources: src.len(),
                params,
            });
        }
        Self {
            pairs: grids,
            param_source,
            param_target,
            source,
            target,
        }
    }

    fn row_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.source.tokens.len()];
        for &s in &self.param_source {
            sizes[s as usize] += 1;
        }
        sizes
    }

    fn initial(&self, init: Option<(&TranslationModel, f64)>) -> Vec<f64> {
        let sizes = self.row_sizes();
        let uniform: Vec<f64> = self
            .param_source
            .iter()
            .map(|&s| 1.0 / sizes[s as usize] as f64)
            .collect();
        let Some((prior, weight)) = init else {
            return uniform;
        };
        let weight = weight.clamp(0.0, 1.0);
        let prior_vals: Vec<f64> = self
            .param_source
            .iter()
            .zip(&self.param_target)
            .map(|(&s, &t)| {
                // The null source row is never shared with a prior.
                if s == 0 {
                    0.0
                } else {
                    prior.prob(
                        &self.source.tokens[s as usize],
                        &self.target.tokens[t as usize],
                    )
                }
            })
            .collect();
        let mut prior_mass = vec![0.0; sizes.len()];
        for (p, &s) in prior_vals.iter().zip(&self.param_source) {
            prior_mass[s as usize] += p;
        }
        let mut probs: Vec<f64> = (0..self.param_source.len())
            .map(|k| {
                let s = self.param_source[k] as usize;
                let v = if prior_mass[s] > 0.0 {
                    weight * prior_vals[k] / prior_mass[s] + (1.0 - weight) * uniform[k]
                } else {
                    uniform[k]
                };
                v.max(INIT_FLOOR)
            })
            .collect();
        self.normalize(&mut probs);
        probs
    }

    fn normalize(&self, probs: &mut [f64]) {
        let mut totals = vec![0.0; self.source.tokens.len()];
        for (p, &s) in probs.iter().zip(&self.param_source) {
            totals[s as usize] += p;
        }
        for (p, &s) in probs.iter_mut().zip(&self.param_source) {
            if totals[s as usize] > 0.0 {
                *p /= totals[s as usize];
            }
        }
    }

    /// Weighted log-likelihood under `probs`, accumulating expected counts
    /// into `counts` when given.
    fn expectation(&self, probs: &[f64], mut counts: Option<&mut [f64]>) -> f64 {
        let mut ll = 0.0;
        for grid in &self.pairs {
            let uniform_align = (grid.sources as f64).ln();
            for row in grid.params.chunks(grid.sources) {
                let denom: f64 = row.iter().map(|&p| probs[p as usize]).sum();
                if denom <= 0.0 {
                    continue;
                }
                ll += grid.weight * (denom.ln() - uniform_align);
                if let Some(counts) = counts.as_deref_mut() {
                    let scale = grid.weight / denom;
                    for &p in row {
                        counts[p as usize] += probs[p as usize] * scale;
                    }
                }
            }
        }
        ll
    }

    fn maximization(&self, counts: &[f64], probs: &mut [f64]) -> f64 {
        let mut totals = vec![0.0; self.source.tokens.len()];
        for (c, &s) in counts.iter().zip(&self.param_source) {
            totals[s as usize] += c;
        }
        for (k, &s) in self.param_source.iter().enumerate() {
            if totals[s as usize] > 0.0 {
                probs[k] = counts[k] / totals[s as usize];
            }
        }
        let mut sums = vec![0.0; totals.len()];
        for (p, &s) in probs.iter().zip(&self.param_source) {
            sums[s as usize] += p;
        }
        sums.iter()
            .zip(self.row_sizes())
            .filter(|(_, n)| *n > 0)
            .map(|(s, _)| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// EM-trained lexical backend.
#[derive(Debug, Default)]
pub struct LexicalBackend {
    pub config: LexicalConfig,
    hooks: BackendHooks,
}

impl LexicalBackend {
    pub fn new(config: LexicalConfig) -> Self {
        Self {
            config,
            hooks: BackendHooks::default(),
        }
    }

    fn fit(
        &self,
        languages: &LanguagePair,
        pairs: &[TrainingPair],
        init: Option<(&TranslationModel, f64)>,
    ) -> Result<TranslationModel, BackendError> {
        if self.config.em_iterations == 0 {
            return Err(BackendError::NoIterations);
        }
        if let Some(p) = pairs
            .iter()
            .find(|p| !(p.weight >= 0.0 && p.weight.is_finite()))
        {
            return Err(BackendError::InvalidWeight(p.weight));
        }
        let problem = EmProblem::build(pairs);
        if problem.pairs.is_empty() {
            return Err(BackendError::EmptyTrainingSet);
        }
        let mut probs = problem.initial(init);
        let mut counts = vec![0.0; probs.len()];
        let mut trace = TrainingTrace::default();
        for _ in 0..self.config.em_iterations {
            counts.iter_mut().for_each(|c| *c = 0.0);
            trace
                .log_likelihood
                .push(problem.expectation(&probs, Some(&mut counts)));
            trace
                .max_row_error
                .push(problem.maximization(&counts, &mut probs));
        }
        trace.log_likelihood.push(problem.expectation(&probs, None));

        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); problem.source.tokens.len()];
        for (k, &p) in probs.iter().enumerate() {
            rows[problem.param_source[k] as usize].push((problem.param_target[k], p));
        }
        for row in &mut rows {
            row.sort_by_key(|&(t, _)| t);
        }
        let version = init.map_or(1, |(m, _)| m.version + 1);
        Ok(TranslationModel::from_parts(
            languages.clone(),
            version,
            &self.config,
            problem.source.tokens,
            problem.target.tokens,
            rows,
            trace,
        ))
    }
}

impl TranslationBackend for LexicalBackend {
    type Model = TranslationModel;

    fn train(
        &self,
        languages: &LanguagePair,
        pairs: &[TrainingPair],
        init: Option<(&TranslationModel, f64)>,
    ) -> Result<TranslationModel, BackendError> {
        self.hooks.record_train();
        self.fit(languages, pairs, init)
    }

    fn pretrain(&self, neighbor_pairs: &[TrainingPair]) -> Result<TranslationModel, BackendError> {
        self.hooks.record_pretrain();
        let mul = LanguageId::new("mul").expect("valid code");
        let languages = LanguagePair {
            source: mul.clone(),
            target: mul,
        };
        self.fit(&languages, neighbor_pairs, None)
    }

    fn pretrain_weight(&self) -> f64 {
        self.config.pretrain_weight
    }

    /// Monotone greedy decode. Label tokens are skipped; placeholders and
    /// unknown tokens are copied through.
    fn translate(
        &self,
        model: &TranslationModel,
        source: &[String],
    ) -> Result<Vec<String>, BackendError> {
        if model.rows.len() <= 1 {
            return Err(BackendError::UntrainedModel);
        }
        let mut out = Vec::with_capacity(source.len());
        for tok in source {
            if is_label_token(tok) {
                continue;
            }
            if is_placeholder(tok) {
                out.push(tok.clone());
                continue;
            }
            match model.best_target(tok) {
                Some(Some(t)) => out.push(t.to_owned()),
                Some(None) => {}
                None => out.push(tok.clone()),
            }
        }
        Ok(out)
    }

    fn vocabulary(&self, model: &TranslationModel) -> Vocabulary {
        model.vocabulary()
    }

    fn update_vocabulary(
        &self,
        model: &TranslationModel,
        accumulated: &[TrainingPair],
        policy: VocabularyPolicy,
    ) -> Result<TranslationModel, BackendError> {
        self.hooks.record_train();
        let mut next = match policy {
            VocabularyPolicy::Updated => self.fit(&model.languages, accumulated, None)?,
            VocabularyPolicy::Frozen => {
                let mapped = model.vocabulary().map_unknown(accumulated);
                self.fit(&model.languages, &mapped, None)?
            }
        };
        next.version = model.version + 1;
        Ok(next)
    }

    fn hooks(&self) -> &BackendHooks {
        &self.hooks
    }
}

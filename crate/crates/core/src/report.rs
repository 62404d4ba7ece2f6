//! Run directories and report tables.
//!
//! A run directory holds:
//!
//! | file                | contents                                            |
//! |---------------------|-----------------------------------------------------|
//! | `config.toml`       | the experiment config exactly as supplied           |
//! | `report.json`       | [`ExperimentReport`]                                |
//! | `iterations.csv`    | one row per iteration (schema [`ITERATIONS_HEADER`]) |
//! | `per_book_bleu.csv` | per-book BLEU trajectories ([`PER_BOOK_HEADER`])     |
//! | `family.tsv`        | ranked candidate source languages                   |
//! | `seed_lines.txt`    | seed line indices, one per line                     |
//! | `final_draft.txt`   | the final combined translation                      |
//! | `summary.txt`       | human-readable overview                             |
//!
//! Column meanings for `iterations.csv`:
//!
//! * `iteration` — 1-based; `n`, `v`, `delta_v` are the counters at entry.
//! * `pretrained` — 1 when a prior was trained in that iteration.
//! * `chosen_book` — the book post-edited at the end (empty if none).
//! * `new_lines`, `new_types` — lines and target types it added.
//! * `machine_bleu` — BLEU over lines still machine-translated at entry.
//! * `heldout_bleu` — BLEU over held-out books (empty without any).
//! * `dropped_placeholders` — placeholders the backend emitted but that
//!   had no binding.
//!
//! `per_book_bleu.csv` has one row per (iteration, book) with
//! `stage = iteration`, plus `stage = final` rows scoring the final draft
//! (their `iteration` is the number of completed iterations). `bleu` scores
//! the whole book draft, human lines included; `ranking_bleu` scores only
//! the machine lines of books still eligible for post-editing and is empty
//! otherwise.
//!
//! Floating-point cells use four decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bleu::{corpus_bleu, BleuReport, BookBleu};
use crate::corpus::{LanguageId, ParallelCorpus};
use crate::family::{Family, LanguageScore};
use crate::workflow::{ExperimentRun, IterationRecord};

pub const ITERATIONS_HEADER: [&str; 11] = [
    "iteration",
    "n",
    "v",
    "delta_v",
    "pretrained",
    "chosen_book",
    "new_lines",
    "new_types",
    "machine_bleu",
    "heldout_bleu",
    "dropped_placeholders",
];

pub const PER_BOOK_HEADER: [&str; 7] = [
    "stage",
    "iteration",
    "book",
    "lines",
    "bleu",
    "brevity_penalty",
    "ranking_bleu",
];

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("report.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported report format {0}")]
    Format(u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookScore {
    pub book: String,
    pub bleu: f64,
}

/// Everything an experiment produced except the draft text itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: u32,
    pub run: String,
    pub config_hash: String,
    pub target: LanguageId,
    pub n_total: usize,
    pub seed_size: usize,
    pub family: Family,
    pub family_scores: Vec<LanguageScore>,
    /// Post-editing order estimated on a proxy language, if one was used.
    pub proxy_ordering: Option<Vec<BookScore>>,
    pub iterations: Vec<IterationRecord>,
    pub final_n: usize,
    pub final_v: usize,
    pub final_book_bleu: Vec<BookBleu>,
    /// Whole final draft against the reference.
    pub final_bleu: Option<BleuReport>,
}

impl ExperimentReport {
    pub fn new(
        run: String,
        config_hash: String,
        corpus: &ParallelCorpus,
        target: &LanguageId,
        result: &ExperimentRun,
        proxy_ordering: Option<Vec<(String, f64)>>,
    ) -> Self {
        let final_bleu = corpus
            .text(target)
            .ok()
            .and_then(|reference| corpus_bleu(&result.final_draft, reference).ok());
        Self {
            format: REPORT_FORMAT,
            run,
            config_hash,
            target: target.clone(),
            n_total: corpus.n_total(),
            seed_size: result.seed_lines.len(),
            family: result.family.clone(),
            family_scores: result.family_scores.clone(),
            proxy_ordering: proxy_ordering.map(|order| {
                order
                    .into_iter()
                    .map(|(book, bleu)| BookScore { book, bleu })
                    .collect()
            }),
            iterations: result.history.clone(),
            final_n: result.n,
            final_v: result.v,
            final_book_bleu: result.final_book_bleu.clone(),
            final_bleu,
        }
    }

    pub fn read(dir: &Path) -> Result<Self, ReportError> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let report: Self = serde_json::from_str(&text)?;
        if report.format != REPORT_FORMAT {
            return Err(ReportError::Format(report.format));
        }
        Ok(report)
    }
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn opt_bleu(r: &Option<BleuReport>) -> String {
    r.as_ref().map(|r| num(r.score)).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn iterations_csv(report: &ExperimentReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ITERATIONS_HEADER)?;
    for r in &report.iterations {
        w.write_record([
            r.iteration.to_string(),
            r.n.to_string(),
            r.v.to_string(),
            r.delta_v.to_string(),
            u8::from(r.pretrained).to_string(),
            r.chosen_book.clone().unwrap_or_default(),
            r.new_lines.to_string(),
            r.new_types.to_string(),
            opt_bleu(&r.machine_bleu),
            opt_bleu(&r.heldout_bleu),
            r.dropped_placeholders.to_string(),
        ])?;
    }
    finish(w)
}

pub fn per_book_csv(report: &ExperimentReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PER_BOOK_HEADER)?;
    let row = |stage: &str, iteration: usize, b: &BookBleu, ranking: Option<&BookBleu>| {
        [
            stage.to_owned(),
            iteration.to_string(),
            b.book.clone(),
            b.lines.to_string(),
            num(b.report.score),
            num(b.report.brevity_penalty),
            ranking.map(|r| num(r.report.score)).unwrap_or_default(),
        ]
    };
    for r in &report.iterations {
        for b in &r.book_bleu {
            let ranking = r.ranking.iter().find(|x| x.book == b.book);
            w.write_record(row("iteration", r.iteration, b, ranking))?;
        }
    }
    for b in &report.final_book_bleu {
        w.write_record(row("final", report.iterations.len(), b, None))?;
    }
    finish(w)
}

/// `language, p_zero_distortion, p_fertility_one, performance_score,
/// member` for every ranked candidate; for a linguistic family, just the
/// members with empty scores.
pub fn family_tsv(report: &ExperimentReport) -> String {
    let mut out =
        String::from("language\tp_zero_distortion\tp_fertility_one\tperformance_score\tmember\n");
    let member = |l: &LanguageId| u8::from(report.family.members.contains(l));
    if report.family_scores.is_empty() {
        for l in &report.family.members {
            let _ = writeln!(out, "{l}\t\t\t\t1");
        }
    }
    for s in &report.family_scores {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            s.language,
            num(s.p_zero_distortion),
            num(s.p_fertility_one),
            num(s.performance_score),
            member(&s.language)
        );
    }
    out
}

pub fn summary_text(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run {}", report.run);
    let _ = writeln!(out, "target {} ({} lines)", report.target, report.n_total);
    let _ = writeln!(out, "seed {} lines", report.seed_size);
    let members: Vec<String> = report
        .family
        .members
        .iter()
        .map(|l| l.to_string())
        .collect();
    let _ = writeln!(
        out,
        "family ({}) {}",
        report.family.method,
        members.join(" ")
    );
    if let Some(order) = &report.proxy_ordering {
        let books: Vec<&str> = order.iter().map(|b| b.book.as_str()).collect();
        let _ = writeln!(out, "proxy order {}", books.join(" "));
    }
    for r in &report.iterations {
        let _ = writeln!(
            out,
            "iteration {}: n={} v={} dv={} pretrained={} machine_bleu={} -> {}",
            r.iteration,
            r.n,
            r.v,
            r.delta_v,
            r.pretrained,
            r.machine_bleu.as_ref().map_or("-".into(), |b| num(b.score)),
            r.chosen_book.as_deref().unwrap_or("(none)")
        );
    }
    let _ = writeln!(out, "final n={} v={}", report.final_n, report.final_v);
    if let Some(b) = &report.final_bleu {
        let _ = writeln!(out, "final draft BLEU {}", num(b.score));
    }
    out
}

fn lines_text<I: IntoIterator<Item = String>>(rows: I) -> String {
    rows.into_iter().fold(String::new(), |mut acc, row| {
        acc.push_str(&row);
        acc.push('\n');
        acc
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), ReportError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

/// Writes the derived tables (`iterations.csv`, `per_book_bleu.csv`,
/// `family.tsv`, `summary.txt`) for `report` into `dir`.
pub fn write_tables(dir: &Path, report: &ExperimentReport) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir, "iterations.csv", &iterations_csv(report)?)?;
    write(dir, "per_book_bleu.csv", &per_book_csv(report)?)?;
    write(dir, "family.tsv", &family_tsv(report))?;
    write(dir, "summary.txt", &summary_text(report))
}

/// Writes a complete run directory.
pub fn write_run_dir(
    dir: &Path,
    config_text: &str,
    report: &ExperimentReport,
    result: &ExperimentRun,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir, "config.toml", config_text)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write(dir, "report.json", &json)?;
    write(
        dir,
        "seed_lines.txt",
        &lines_text(result.seed_lines.iter().map(|i| i.to_string())),
    )?;
    write(
        dir,
        "final_draft.txt",
        &lines_text(result.final_draft.iter().map(|l| l.join(" "))),
    )?;
    write_tables(dir, report)
}

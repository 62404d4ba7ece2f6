//! `lowres-loop`: batch command line for corpus preparation, family
//! ranking, lexical-model training, multi-source combination, evaluation and
//! full post-editing loop experiments.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or validation
//! errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use lowres_core::backend::{
    LanguagePair, LexicalBackend, LexicalConfig, TrainingPair, TranslationBackend, TranslationModel,
};
use lowres_core::bleu::{corpus_bleu, per_book_bleu};
use lowres_core::config::ExperimentConfig;
use lowres_core::corpus::{tokenize, BookIndex, LanguageId, ParallelCorpus};
use lowres_core::ensemble::{centered_combine, Hypothesis, HypothesisSet};
use lowres_core::family::{rank_languages, FamilyMethod};
use lowres_core::lexicon::{
    prefix_language_labels, restore_entities_lenient, tag_entities, LexiconTable, TaggedSentence,
};
use lowres_core::report::{write_run_dir, write_tables, ExperimentReport};
use lowres_core::synth::{generate_synthetic, SyntheticCorpusSpec};
use lowres_core::workflow::{
    heldout_language_ordering, run_experiment, select_seed, BookChoice, SelectionStrategy,
};

#[derive(Parser)]
#[command(
    name = "lowres-loop",
    version,
    about = "Human-in-the-loop translation experiments for closed parallel texts"
)]
struct Cli {
    /// Worker thread cap for parallel stages.
    #[arg(long, global = true, env = "LOWRES_LOOP_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a corpus; optionally write a normalized copy.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the normalized corpus and `summary.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic multilingual corpus.
    Synth(SynthArgs),
    /// Rank candidate source languages for a target on the seed lines.
    Rank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target: LanguageId,
        #[arg(long, default_value = "distortion")]
        method: FamilyMethod,
        /// Comma-separated list for the linguistic method.
        #[arg(long, value_delimiter = ',')]
        languages: Vec<LanguageId>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// TSV output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose seed lines and split them into train and validation.
    Select {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long, default_value_t = 0.057)]
        validation_fraction: f64,
        /// Output directory for `seed_lines.txt` and `split.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a lexical model for one language direction on the seed lines.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        source: LanguageId,
        #[arg(long)]
        target: LanguageId,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Continue from an existing model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a text file, one sentence per line.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the most centered of several line-aligned translations.
    Combine {
        /// `LANG=PATH`, once per source language, in family order.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Optional TSV of per-line winners and centeredness scores.
        #[arg(long)]
        choices: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Book index TSV for a per-book breakdown.
        #[arg(long)]
        books: Option<PathBuf>,
        /// JSON output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment described by a config file.
    RunLoop {
        #[arg(long)]
        config: PathBuf,
        /// Output root; overrides `LOWRES_LOOP_RUN_DIR` and the config.
        #[arg(long)]
        out_root: Option<PathBuf>,
    },
    /// Regenerate tables and summary from a run's `report.json`.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Directory for the tables (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// TOML spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    languages: Option<usize>,
    #[arg(long)]
    books: Option<usize>,
    #[arg(long)]
    lines_per_book: Option<usize>,
    #[arg(long)]
    vocabulary: Option<usize>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    clusters: Option<usize>,
    /// One rate, or one per language, comma-separated.
    #[arg(long, value_delimiter = ',')]
    permutation_noise: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    merge_noise: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Seed lines: a random sample, a book, or a file of indices.
#[derive(Args)]
struct SelectionArgs {
    #[arg(long, conflicts_with_all = ["book", "seed_lines"])]
    sample: Option<usize>,
    #[arg(long, conflicts_with = "seed_lines")]
    book: Option<String>,
    /// File with one line index per line (as written by `select`).
    #[arg(long)]
    seed_lines: Option<PathBuf>,
    /// RNG seed for random sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, default_value_t = LexicalConfig::default().em_iterations)]
    em_iterations: usize,
    #[arg(long, default_value_t = LexicalConfig::default().null_floor)]
    null_floor: f64,
    #[arg(long, default_value_t = LexicalConfig::default().pretrain_weight)]
    pretrain_weight: f64,
}

impl BackendArgs {
    fn config(&self) -> LexicalConfig {
        LexicalConfig {
            em_iterations: self.em_iterations,
            null_floor: self.null_floor,
            pretrain_weight: self.pretrain_weight,
            ..LexicalConfig::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { manifest, out } => ingest(&manifest, out.as_deref()),
        Command::Synth(args) => synth(args),
        Command::Rank {
            manifest,
            target,
            method,
            languages,
            selection,
            backend,
            out,
        } => {
            let corpus = load_corpus(&manifest)?;
            let seed = seed_lines(&corpus, &selection)?;
            let list = (!languages.is_empty()).then_some(languages.as_slice());
            let scores = rank_languages(&corpus, &target, &seed, method, list, &backend.config())?;
            let mut tsv = String::from(
                "rank\tlanguage\tp_zero_distortion\tp_fertility_one\tperformance_score\n",
            );
            for (i, s) in scores.iter().enumerate() {
                let _ = writeln!(
                    tsv,
                    "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                    i + 1,
                    s.language,
                    s.p_zero_distortion,
                    s.p_fertility_one,
                    s.performance_score
                );
            }
            emit(out.as_deref(), &tsv)
        }
        Command::Select {
            manifest,
            selection,
            validation_fraction,
            out,
        } => {
            let corpus = load_corpus(&manifest)?;
            let seed = seed_lines(&corpus, &selection)?;
            let split = corpus.make_split(&seed, validation_fraction)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_file(&out.join("seed_lines.txt"), &index_lines(&seed))?;
            let summary = serde_json::json!({
                "train": split.train.len(),
                "validation": split.validation.len(),
                "test": split.test.len(),
                "validation_lines": split.validation,
            });
            write_file(
                &out.join("split.json"),
                &(serde_json::to_string_pretty(&summary)? + "\n"),
            )
        }
        Command::Train {
            manifest,
            source,
            target,
            lexicon,
            init,
            selection,
            backend,
            out,
        } => {
            let corpus = load_corpus(&manifest)?;
            let lexicon = lexicon.as_deref().map(load_lexicon).transpose()?;
            let seed = seed_lines(&corpus, &selection)?;
            let src = corpus.text(&source)?;
            let tgt = corpus.text(&target)?;
            let pairs = seed
                .iter()
                .map(|&i| {
                    let s = tag(&src[i], &source, lexicon.as_ref())?;
                    let t = tag(&tgt[i], &target, lexicon.as_ref())?;
                    Ok(TrainingPair::new(
                        prefix_language_labels(&s.tokens, &source, &target)?,
                        t.tokens,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let init_model = init.as_deref().map(load_model).transpose()?;
            let backend = LexicalBackend::new(backend.config());
            let model = backend.train(
                &LanguagePair { source, target },
                &pairs,
                init_model.as_ref().map(|m| (m, backend.pretrain_weight())),
            )?;
            write_file(&out, &model.to_tsv())
        }
        Command::Translate {
            model,
            input,
            lexicon,
            out,
        } => {
            let model = load_model(&model)?;
            let lexicon = lexicon.as_deref().map(load_lexicon).transpose()?;
            let backend = LexicalBackend::new(LexicalConfig {
                null_floor: model.null_floor(),
                ..LexicalConfig::default()
            });
            let (source, target) = (&model.languages.source, &model.languages.target);
            let lines = read_text(&input)?;
            let translated = lines
                .par_iter()
                .map(|line| {
                    let tagged = tag(line, source, lexicon.as_ref())?;
                    let labeled = prefix_language_labels(&tagged.tokens, source, target)?;
                    let raw = backend.translate(&model, &labeled)?;
                    Ok(restore(&tagged.with_tokens(raw), target, lexicon.as_ref()))
                })
                .collect::<Result<Vec<_>>>()?;
            write_file(&out, &text_lines(&translated))
        }
        Command::Combine {
            inputs,
            out,
            choices,
        } => combine(&inputs, &out, choices.as_deref()),
        Command::Evaluate {
            hyp,
            reference,
            books,
            out,
        } => {
            let hyps = read_text(&hyp)?;
            let refs = read_text(&reference)?;
            let report = corpus_bleu(&hyps, &refs)?;
            let mut json = serde_json::json!({ "corpus": report });
            if let Some(books) = books {
                let text = fs::read_to_string(&books)
                    .with_context(|| format!("reading {}", books.display()))?;
                let index = BookIndex::parse_tsv(&text, refs.len())?;
                let lang = LanguageId::new("ref")?;
                let corpus = ParallelCorpus::new([(lang.clone(), refs)].into(), index, 0)?;
                json["books"] =
                    serde_json::to_value(per_book_bleu(&corpus, &hyps, &lang, &BTreeSet::new())?)?;
            }
            emit(
                out.as_deref(),
                &(serde_json::to_string_pretty(&json)? + "\n"),
            )
        }
        Command::RunLoop { config, out_root } => run_loop(&config, out_root),
        Command::Report { run, out } => {
            let report = ExperimentReport::read(&run)?;
            write_tables(out.as_deref().unwrap_or(&run), &report)?;
            print!("{}", lowres_core::report::summary_text(&report));
            Ok(())
        }
    }
}

fn ingest(manifest: &Path, out: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(manifest)?;
    let summary = serde_json::json!({
        "n_total": corpus.n_total(),
        "split_seed": corpus.split_seed(),
        "languages": corpus.languages().map(|l| l.to_string()).collect::<Vec<_>>(),
        "books": corpus.book_index().books(),
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match out {
        Some(dir) => {
            corpus.save(dir)?;
            write_file(&dir.join("summary.json"), &text)
        }
        None => emit(None, &text),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SyntheticCorpusSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SyntheticCorpusSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = args.$flag { spec.$field = v; })*};
    }
    set!(seed => rng_seed, languages => num_languages, books => num_books, lines_per_book => lines_per_book,
         vocabulary => vocabulary_size, zipf => zipf_exponent, clusters => genre_clusters);
    if !args.permutation_noise.is_empty() {
        spec.permutation_noise = args.permutation_noise.clone();
    }
    if !args.merge_noise.is_empty() {
        spec.merge_noise = args.merge_noise.clone();
    }
    let manifest = generate_synthetic(&spec, &args.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn combine(inputs: &[String], out: &Path, choices: Option<&Path>) -> Result<()> {
    let mut sources = Vec::new();
    for spec in inputs {
        let Some((lang, path)) = spec.split_once('=') else {
            bail!("--input expects LANG=PATH, got {spec:?}");
        };
        let lang = LanguageId::new(lang)?;
        let path = PathBuf::from(path);
        sources.push((lang, read_text(&path)?, path));
    }
    let n = sources[0].1.len();
    if let Some((_, lines, path)) = sources.iter().find(|(_, lines, _)| lines.len() != n) {
        bail!("{} has {} lines, expected {n}", path.display(), lines.len());
    }
    let chosen = (0..n)
        .into_par_iter()
        .map(|i| {
            centered_combine(&HypothesisSet {
                sentence_index: i,
                hypotheses: sources
                    .iter()
                    .map(|(lang, lines, _)| Hypothesis {
                        language: lang.clone(),
                        tokens: lines[i].clone(),
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_file(
        out,
        &text_lines(&chosen.iter().map(|c| c.tokens.clone()).collect::<Vec<_>>()),
    )?;
    if let Some(path) = choices {
        let mut tsv = String::from("line\tlanguage");
        for (lang, _, _) in &sources {
            let _ = write!(tsv, "\t{lang}");
        }
        tsv.push('\n');
        for (i, c) in chosen.iter().enumerate() {
            let _ = write!(tsv, "{i}\t{}", c.chosen_language);
            for s in &c.centeredness {
                let _ = write!(tsv, "\t{s:.6}");
            }
            tsv.push('\n');
        }
        write_file(path, &tsv)?;
    }
    Ok(())
}

fn run_loop(config_path: &Path, out_root: Option<PathBuf>) -> Result<()> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new(""));
    let resolved = config.resolved(base);
    let root = out_root
        .or_else(|| std::env::var_os("LOWRES_LOOP_RUN_DIR").map(PathBuf::from))
        .unwrap_or_else(|| resolved.output_dir.clone());
    let run_dir = root.join(config.run_name());

    let corpus = load_corpus(&resolved.corpus)?;
    let lexicon = resolved.lexicon.as_deref().map(load_lexicon).transpose()?;
    let backend = LexicalBackend::new(resolved.backend.clone());
    let mut plan = resolved.plan();
    let proxy_ordering = match resolved.proxy_language() {
        Some(proxy) => {
            let order = heldout_language_ordering(
                &backend,
                &corpus,
                lexicon.as_ref(),
                &proxy,
                &plan,
                &backend.config,
            )?;
            plan.settings.book_choice =
                BookChoice::Ordered(order.iter().map(|(b, _)| b.clone()).collect());
            Some(order)
        }
        None => None,
    };
    let result = run_experiment(&backend, &corpus, lexicon.as_ref(), &plan, &backend.config)?;
    let report = ExperimentReport::new(
        config.run_name(),
        config.hash(),
        &corpus,
        &plan.target,
        &result,
        proxy_ordering,
    );
    write_run_dir(&run_dir, &text, &report, &result)?;
    println!("{}", run_dir.display());
    Ok(())
}

fn load_corpus(manifest: &Path) -> Result<ParallelCorpus> {
    ParallelCorpus::load(manifest).with_context(|| format!("loading corpus {}", manifest.display()))
}

fn load_lexicon(path: &Path) -> Result<LexiconTable> {
    LexiconTable::load(path).with_context(|| format!("loading lexicon {}", path.display()))
}

fn load_model(path: &Path) -> Result<TranslationModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TranslationModel::from_tsv(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn seed_lines(corpus: &ParallelCorpus, args: &SelectionArgs) -> Result<BTreeSet<usize>> {
    if let Some(path) = &args.seed_lines {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let lines = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<usize>()
                    .with_context(|| format!("bad line index {l:?}"))
            })
            .collect::<Result<BTreeSet<_>>>()?;
        if let Some(&i) = lines.iter().next_back().filter(|&&i| i >= corpus.n_total()) {
            bail!(
                "seed line {i} outside a corpus of {} lines",
                corpus.n_total()
            );
        }
        return Ok(lines);
    }
    let strategy = match (&args.sample, &args.book) {
        (Some(size), _) => SelectionStrategy::RandomSample {
            size: *size,
            rng_seed: args.seed,
        },
        (None, Some(book)) => SelectionStrategy::Portion { book: book.clone() },
        (None, None) => bail!("one of --sample, --book or --seed-lines is required"),
    };
    Ok(select_seed(corpus, &strategy)?)
}

fn tag(
    tokens: &[String],
    lang: &LanguageId,
    lexicon: Option<&LexiconTable>,
) -> Result<TaggedSentence> {
    Ok(match lexicon {
        Some(lex) if lex.has_language(lang) => tag_entities(tokens, lex, lang)?,
        _ => TaggedSentence {
            source_language: lang.clone(),
            tokens: tokens.to_vec(),
            bindings: Vec::new(),
        },
    })
}

fn restore(
    tagged: &TaggedSentence,
    target: &LanguageId,
    lexicon: Option<&LexiconTable>,
) -> Vec<String> {
    match lexicon {
        Some(lex) => restore_entities_lenient(tagged, target, lex).0,
        None => tagged.tokens.clone(),
    }
}

fn read_text(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(tokenize).collect())
}

fn text_lines(lines: &[Vec<String>]) -> String {
    lines.iter().map(|l| l.join(" ") + "\n").collect()
}

fn index_lines(lines: &BTreeSet<usize>) -> String {
    lines.iter().map(|i| format!("{i}\n")).collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

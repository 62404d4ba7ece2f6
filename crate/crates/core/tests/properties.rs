//! Property tests for the invariants each module promises.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use lowres_core::backend::{
    LanguagePair, LexicalBackend, LexicalConfig, TrainingPair, TranslationBackend,
};
use lowres_core::bleu::{corpus_bleu, sentence_bleu_smoothed};
use lowres_core::corpus::{is_placeholder, Book, BookIndex, LanguageId, ParallelCorpus};
use lowres_core::ensemble::{centered_combine, Hypothesis, HypothesisSet};
use lowres_core::family::score_language;
use lowres_core::lexicon::{placeholder, restore_entities, tag_entities, LexiconTable};
use lowres_core::synth::{generate_corpus, SyntheticCorpusSpec};

fn lang(code: &str) -> LanguageId {
    LanguageId::new(code).unwrap()
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g", "h"]).prop_map(String::from)
}

fn sentence(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 0..=max)
}

fn parallel(max_lines: usize) -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
    prop::collection::vec((sentence(12), sentence(12)), 1..=max_lines)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_ignores_sentence_order(pairs in parallel(12), seed in any::<u64>()) {
        prop_assume!(pairs.iter().any(|(_, r)| !r.is_empty()));
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let a = corpus_bleu(&hyps, &refs).unwrap();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        // deterministic shuffle from the seed
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let hyps2: Vec<_> = order.iter().map(|&i| hyps[i].clone()).collect();
        let refs2: Vec<_> = order.iter().map(|&i| refs[i].clone()).collect();
        let b = corpus_bleu(&hyps2, &refs2).unwrap();
        prop_assert_eq!(a.matches, b.matches);
        prop_assert_eq!(a.totals, b.totals);
        prop_assert!((a.score - b.score).abs() < 1e-9);
    }

    #[test]
    fn bleu_is_bounded_with_consistent_brevity_penalty(pairs in parallel(12)) {
        prop_assume!(pairs.iter().any(|(_, r)| !r.is_empty()));
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = corpus_bleu(&hyps, &refs).unwrap();
        prop_assert!((0.0..=100.0).contains(&r.score));
        prop_assert!((0.0..=1.0).contains(&r.brevity_penalty));
        if r.hyp_length >= r.ref_length {
            prop_assert_eq!(r.brevity_penalty, 1.0);
        } else if r.hyp_length > 0 {
            prop_assert!(r.brevity_penalty < 1.0);
        }
        let s = sentence_bleu_smoothed(&hyps[0], &refs[0]);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn identical_corpora_score_100(refs in prop::collection::vec(prop::collection::vec(word(), 4..10), 1..10)) {
        prop_assert_eq!(corpus_bleu(&refs, &refs).unwrap().score, 100.0);
    }

    #[test]
    fn centeredness_follows_permutation(hyps in prop::collection::vec(sentence(8), 1..6), rot in 0usize..6) {
        let langs = ["aa", "bb", "cc", "dd", "ee", "ff"];
        let set: Vec<Hypothesis> = hyps
            .iter()
            .enumerate()
            .map(|(i, h)| Hypothesis { language: lang(langs[i]), tokens: h.clone() })
            .collect();
        let n = set.len();
        let a = centered_combine(&HypothesisSet { sentence_index: 0, hypotheses: set.clone() }).unwrap();
        let k = rot % n;
        let mut rotated = set.clone();
        rotated.rotate_left(k);
        let b = centered_combine(&HypothesisSet { sentence_index: 0, hypotheses: rotated }).unwrap();
        for i in 0..n {
            prop_assert!((a.centeredness[(i + k) % n] - b.centeredness[i]).abs() < 1e-12);
        }
        // chosen hypothesis has maximal score among eligible candidates
        let all_empty = set.iter().all(|h| h.tokens.is_empty());
        for (i, h) in set.iter().enumerate() {
            if all_empty || !h.tokens.is_empty() {
                prop_assert!(a.centeredness[i] <= a.centeredness[a.chosen_index]);
            }
        }
        prop_assert_eq!(&a.tokens, &set[a.chosen_index].tokens);
    }

    #[test]
    fn splits_partition_the_text(n in 2usize..200, picks in prop::collection::btree_set(0usize..200, 2..60), frac in 0.01f64..0.99) {
        let seed: BTreeSet<usize> = picks.into_iter().filter(|&i| i < n).collect();
        prop_assume!(seed.len() >= 2);
        let rows: Vec<Vec<String>> = (0..n).map(|i| vec![format!("w{i}")]).collect();
        let index = BookIndex::new(vec![Book { name: "all".into(), start: 0, end: n }], n).unwrap();
        let corpus = ParallelCorpus::new([(lang("en"), rows)].into(), index, 5).unwrap();
        let split = corpus.make_split(&seed, frac).unwrap();
        prop_assert!(split.train.is_disjoint(&split.validation));
        prop_assert!(split.train.is_disjoint(&split.test));
        let joined: BTreeSet<usize> = split.train.union(&split.validation).copied().collect();
        prop_assert_eq!(&joined, &seed);
        prop_assert_eq!(split.train.len() + split.validation.len() + split.test.len(), n);
        prop_assert!(!split.validation.is_empty() && !split.train.is_empty());
        prop_assert_eq!(split, corpus.make_split(&seed, frac).unwrap());
    }

    #[test]
    fn book_ranges_partition_the_text(lengths in prop::collection::vec(1usize..20, 1..10)) {
        let mut books = Vec::new();
        let mut start = 0;
        for (i, len) in lengths.iter().enumerate() {
            books.push(Book { name: format!("b{i}"), start, end: start + len });
            start += len;
        }
        let index = BookIndex::new(books, start).unwrap().merge_small_books(2);
        prop_assert_eq!(index.books().iter().map(|b| b.len()).sum::<usize>(), start);
        prop_assert_eq!(index.books()[0].start, 0);
        for w in index.books().windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        prop_assert!(index.books().iter().all(|b| b.len() >= 2) || index.books().len() == 1);
    }

    #[test]
    fn corpus_save_load_round_trip(lines in prop::collection::vec((sentence(6), sentence(6)), 2..30)) {
        let n = lines.len();
        let (en, fr): (Vec<_>, Vec<_>) = lines.into_iter().unzip();
        let mid = n / 2;
        let index = BookIndex::new(
            vec![Book { name: "one".into(), start: 0, end: mid }, Book { name: "two".into(), start: mid, end: n }],
            n,
        )
        .unwrap();
        let corpus = ParallelCorpus::new([(lang("en"), en), (lang("fr"), fr)].into(), index, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = corpus.save(dir.path()).unwrap();
        prop_assert_eq!(ParallelCorpus::load(&manifest).unwrap(), corpus);
    }

    #[test]
    fn em_is_monotone_and_normalized(pairs in parallel(10), weights in prop::collection::vec(0.0f64..2.0, 10)) {
        let pairs: Vec<TrainingPair> = pairs
            .into_iter()
            .zip(weights)
            .map(|((s, t), w)| TrainingPair::new(s, t).weighted(w))
            .collect();
        prop_assume!(pairs.iter().any(|p| p.weight > 0.0 && !p.source.is_empty()));
        let backend = LexicalBackend::new(LexicalConfig { em_iterations: 8, ..LexicalConfig::default() });
        let languages = LanguagePair { source: lang("src"), target: lang("tgt") };
        let Ok(model) = backend.train(&languages, &pairs, None) else { return Ok(()); };
        let ll = &model.trace().log_likelihood;
        for w in ll.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", ll);
        }
        prop_assert!(model.trace().max_row_error.iter().all(|&e| e <= 1e-6));
        prop_assert!(model.max_row_error() <= 1e-6);
    }

    #[test]
    fn translation_never_invents_placeholders(pairs in parallel(8), input in sentence(10), slots in prop::collection::vec(0usize..4, 0..3)) {
        // Targets mention placeholders so the model has seen them.
        let pairs: Vec<TrainingPair> = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (mut s, mut t))| {
                s.push("h".into());
                t.push(placeholder(i % 3));
                TrainingPair::new(s, t)
            })
            .collect();
        let backend = LexicalBackend::new(LexicalConfig { em_iterations: 4, ..LexicalConfig::default() });
        let languages = LanguagePair { source: lang("src"), target: lang("tgt") };
        let model = backend.train(&languages, &pairs, None).unwrap();
        let mut input = input;
        for &k in &slots {
            input.insert(k.min(input.len()), placeholder(k));
        }
        let given: BTreeSet<&String> = input.iter().filter(|t| is_placeholder(t)).collect();
        let out = backend.translate(&model, &input).unwrap();
        for tok in out.iter().filter(|t| is_placeholder(t)) {
            prop_assert!(given.contains(tok), "{tok} not in input {input:?}");
        }
        prop_assert!(out.iter().all(|t| t != "<unk>" && t != "<null>"));
    }

    #[test]
    fn tagging_then_restoring_is_identity(
        words in prop::collection::vec(prop::sample::select(vec!["x", "y", "calls", "sees", "the", "Ana", "Bo", "New", "York"]), 0..15)
    ) {
        let lex = LexiconTable::from_entries([
            (1, lang("en"), "Ana"),
            (2, lang("en"), "Bo"),
            (3, lang("en"), "New York"),
            (4, lang("en"), "York"),
            (3, lang("es"), "Nueva York"),
        ])
        .unwrap();
        let sentence: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        let tagged = tag_entities(&sentence, &lex, &lang("en")).unwrap();
        prop_assert_eq!(restore_entities(&tagged, &lang("en"), &lex).unwrap(), sentence.clone());
        for (k, b) in tagged.bindings.iter().enumerate() {
            prop_assert_eq!(b.ordinal, k);
            prop_assert_eq!(&tagged.tokens.iter().filter(|t| **t == placeholder(k)).count(), &1);
        }
        prop_assert!(!tagged.tokens.iter().any(|t| t == "Ana" || t == "Bo" || t == "York"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// A noise-free copy language aligns monotonically one-to-one.
    #[test]
    fn exact_copy_language_has_unit_statistics(seed in any::<u64>()) {
        let spec = SyntheticCorpusSpec {
            num_languages: 2,
            num_books: 2,
            lines_per_book: 60,
            vocabulary_size: 60,
            genre_clusters: 1,
            rng_seed: seed,
            ..SyntheticCorpusSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let lines: BTreeSet<usize> = (0..corpus.n_total()).collect();
        let config = LexicalConfig { em_iterations: 10, ..LexicalConfig::default() };
        let s = score_language(&corpus, &lang("l01"), &lang("l00"), &lines, &config).unwrap();
        prop_assert_eq!(s.p_zero_distortion, 1.0);
        prop_assert_eq!(s.p_fertility_one, 1.0);
    }

    #[test]
    fn synthetic_generation_is_deterministic(seed in any::<u64>(), noise in 0.0f64..1.0) {
        let spec = SyntheticCorpusSpec {
            num_languages: 3,
            num_books: 2,
            lines_per_book: 10,
            vocabulary_size: 50,
            permutation_noise: vec![noise],
            merge_noise: vec![noise / 2.0],
            rng_seed: seed,
            ..SyntheticCorpusSpec::default()
        };
        let a = generate_corpus(&spec).unwrap();
        prop_assert_eq!(&a, &generate_corpus(&spec).unwrap());
        let lens: BTreeMap<&LanguageId, usize> = a.languages().map(|l| (l, a.text(l).unwrap().len())).collect();
        prop_assert!(lens.values().all(|&n| n == 20));
    }
}

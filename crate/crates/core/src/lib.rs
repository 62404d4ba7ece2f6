//! Experiment framework for translating a closed, massively parallel text
//! into a low-resource language with a human in the loop.
//!
//! The pieces, bottom-up:
//!
//! * [`corpus`]: line-aligned multilingual text with book structure.
//! * [`lexicon`]: order-preserving named-entity placeholders and language labels.
//! * [`backend`]: the translation backend contract and an EM lexical reference model.
//! * [`family`]: alignment statistics and source-language family ranking.
//! * [`ensemble`]: centeredness combination of multi-source hypotheses.
//! * [`bleu`]: corpus and sentence BLEU.
//! * [`workflow`]: seed selection, update strategies and the iterative
//!   train/translate/combine/post-edit loop.
//! * [`synth`]: synthetic Zipfian multilingual corpora.
//! * [`config`] and [`report`]: experiment configuration and run artifacts.

pub mod backend;
pub mod bleu;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod family;
pub mod lexicon;
pub mod report;
pub mod stats;
pub mod synth;
pub mod workflow;

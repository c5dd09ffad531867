//! Detection of LLM-generated short answers in online-lesson corpora.
//!
//! The crate is organized around the stages of a detection study:
//!
//! - [`corpus`] — labeled response corpora, consensus labels, inter-rater
//!   reliability, and leakage-free learner-level splits
//! - [`stylometry`] — the 13-feature writing-style vector and feature
//!   standardization
//! - [`classifiers`] — multinomial logistic regression and random forest
//!   over stylometric features, with learner-level cross-validation
//! - [`evaluation`] — per-class precision/recall/F1, macro and weighted
//!   averages, and confusion matrices
//! - [`gateway`] — clients for external detectors (commercial API and a
//!   rubric-prompted LLM judge) with verdict normalization and a
//!   record-replay cache
//! - [`outcomes`] — random-intercept mixed-effects logistic regression
//!   quantifying the learning-outcome effect of suspected LLM use
//! - [`cli`] — the `sleuth` command-line pipeline
//!
//! All model training and statistical fitting is deterministic given a seed.

pub mod classifiers;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod gateway;
pub mod outcomes;
pub mod stylometry;

pub use corpus::{Corpus, Label, LabeledResponse};

//! Labeled response corpora: loading, consensus labels, inter-rater
//! reliability, and learner-level train/test splits.
//!
//! A corpus row is one learner answer together with the two coders' labels
//! and/or the consensus label on the three-valued scale 0 / 0.5 / 1.
//! Splits are always performed at the learner level so that no learner's
//! responses leak across the train/test boundary.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Three-valued ground-truth / verdict scale.
///
/// Numeric codes are 0.0 (human-authored), 0.5 (uncertain) and 1.0
/// (LLM-generated); text forms are `"0"`, `"0.5"` and `"1"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Human,
    Uncertain,
    Llm,
}

impl Label {
    /// All labels in fixed class order (0, 0.5, 1).
    pub const ALL: [Label; 3] = [Label::Human, Label::Uncertain, Label::Llm];

    /// Numeric code: 0.0, 0.5 or 1.0.
    pub fn code(self) -> f64 {
        match self {
            Label::Human => 0.0,
            Label::Uncertain => 0.5,
            Label::Llm => 1.0,
        }
    }

    /// Class index in the fixed order (0, 0.5, 1) -> (0, 1, 2).
    pub fn index(self) -> usize {
        match self {
            Label::Human => 0,
            Label::Uncertain => 1,
            Label::Llm => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    /// Canonical text form: `"0"`, `"0.5"` or `"1"`.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Human => "0",
            Label::Uncertain => "0.5",
            Label::Llm => "1",
        }
    }

    /// Parses the text forms `"0"`, `"0.5"`, `"1"` (plus `"0.0"`/`"1.0"`),
    /// ignoring surrounding whitespace.
    pub fn parse(token: &str) -> Result<Label, CorpusError> {
        match token.trim() {
            "0" | "0.0" => Ok(Label::Human),
            "0.5" | ".5" => Ok(Label::Uncertain),
            "1" | "1.0" => Ok(Label::Llm),
            other => Err(CorpusError::UnknownLabel(other.to_string())),
        }
    }

    /// Human-readable class name as printed in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Label::Human => "Human-authored (0)",
            Label::Uncertain => "Uncertain (0.5)",
            Label::Llm => "LLM-generated (1)",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Label, D::Error> {
        let s = String::deserialize(deserializer)?;
        Label::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One learner answer with coder labels, consensus label, and the optional
/// paired posttest MCQ outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub response_id: String,
    pub learner_id: String,
    #[serde(default)]
    pub lesson_id: String,
    #[serde(default)]
    pub item_id: String,
    pub text: String,
    pub coder_a: Option<Label>,
    pub coder_b: Option<Label>,
    pub consensus: Label,
    pub mcq_correct: Option<bool>,
}

/// Where a corpus came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub format: String,
}

/// An ordered collection of labeled responses.
///
/// Immutable after load; safe to share across threads for read-only access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    responses: Vec<LabeledResponse>,
    provenance: Provenance,
}

/// Result of a learner-level split.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: Corpus,
    pub test: Corpus,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("unknown label token {0:?} (expected \"0\", \"0.5\" or \"1\")")]
    UnknownLabel(String),
    #[error("duplicate response_id {id:?} at line {line}")]
    DuplicateResponseId { id: String, line: usize },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("split ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("kappa is undefined: expected agreement is 1 (both coders constant)")]
    UndefinedKappa,
    #[error("label sequences must have equal length >= 2 (got {a} and {b})")]
    LengthMismatch { a: usize, b: usize },
}

/// Supported corpus file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusFormat::Csv => "csv",
            CorpusFormat::Jsonl => "jsonl",
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// Consensus rule: two equal labels keep that label, any disagreement is
/// Uncertain.
pub fn consensus_label(a: Label, b: Label) -> Label {
    if a == b {
        a
    } else {
        Label::Uncertain
    }
}

impl Corpus {
    /// Builds a corpus from already-validated responses.
    pub fn from_responses(
        responses: Vec<LabeledResponse>,
        provenance: Provenance,
    ) -> Result<Corpus, CorpusError> {
        let mut seen = HashSet::new();
        for (i, r) in responses.iter().enumerate() {
            if r.learner_id.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line: i + 1,
                    message: "empty learner_id".to_string(),
                });
            }
            if !seen.insert(r.response_id.clone()) {
                return Err(CorpusError::DuplicateResponseId {
                    id: r.response_id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Corpus {
            responses,
            provenance,
        })
    }

    pub fn responses(&self) -> &[LabeledResponse] {
        &self.responses
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Unique learner ids in order of first appearance.
    pub fn learner_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.responses {
            if seen.insert(r.learner_id.as_str()) {
                out.push(r.learner_id.clone());
            }
        }
        out
    }

    /// Counts of consensus labels; the values sum to `len()`.
    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts: BTreeMap<Label, usize> =
            Label::ALL.iter().map(|&l| (l, 0)).collect();
        for r in &self.responses {
            *counts.get_mut(&r.consensus).expect("all labels present") += 1;
        }
        counts
    }

    /// Writes the corpus back out as CSV with the standard column set.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "response_id",
            "learner_id",
            "lesson_id",
            "item_id",
            "text",
            "coder_a",
            "coder_b",
            "consensus",
            "mcq_correct",
        ])
        .map_err(|e| io_err("<writer>", e))?;
        for r in &self.responses {
            let opt = |l: Option<Label>| l.map(|l| l.as_str().to_string()).unwrap_or_default();
            let mcq = match r.mcq_correct {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            w.write_record([
                r.response_id.as_str(),
                r.learner_id.as_str(),
                r.lesson_id.as_str(),
                r.item_id.as_str(),
                r.text.as_str(),
                &opt(r.coder_a),
                &opt(r.coder_b),
                r.consensus.as_str(),
                mcq,
            ])
            .map_err(|e| io_err("<writer>", e))?;
        }
        w.flush().map_err(|e| CorpusError::Io {
            path: "<writer>".to_string(),
            source: e,
        })?;
        Ok(())
    }
}

fn io_err(path: &str, e: csv::Error) -> CorpusError {
    CorpusError::MalformedRow {
        line: 0,
        message: format!("{path}: {e}"),
    }
}

/// Loads a corpus from a CSV or JSONL file.
///
/// Required fields are `response_id`, `learner_id`, `text`, and either a
/// `consensus` label or both coder labels. When both coder labels are
/// present the consensus is checked (or derived if the column is absent);
/// rows carrying a consensus that contradicts agreeing coders are rejected.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let provenance = Provenance {
        source: path.display().to_string(),
        format: format.as_str().to_string(),
    };
    let responses = match format {
        CorpusFormat::Csv => load_csv(file)?,
        CorpusFormat::Jsonl => load_jsonl(file)?,
    };
    if responses.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Corpus::from_responses(responses, provenance)
}

struct RawRow {
    line: usize,
    response_id: String,
    learner_id: String,
    lesson_id: String,
    item_id: String,
    text: String,
    coder_a: Option<Label>,
    coder_b: Option<Label>,
    consensus: Option<Label>,
    mcq_correct: Option<bool>,
}

/// Resolves the consensus field against the coder labels and validates ids.
fn finish_row(row: RawRow, seen: &mut HashSet<String>) -> Result<LabeledResponse, CorpusError> {
    let RawRow {
        line,
        response_id,
        learner_id,
        lesson_id,
        item_id,
        text,
        coder_a,
        coder_b,
        consensus,
        mcq_correct,
    } = row;
    if response_id.is_empty() {
        return Err(CorpusError::MalformedRow {
            line,
            message: "empty response_id".to_string(),
        });
    }
    if learner_id.is_empty() {
        return Err(CorpusError::MalformedRow {
            line,
            message: "empty learner_id".to_string(),
        });
    }
    if !seen.insert(response_id.clone()) {
        return Err(CorpusError::DuplicateResponseId {
            id: response_id,
            line,
        });
    }
    let consensus = match (coder_a, coder_b, consensus) {
        (Some(a), Some(b), stored) => {
            let derived = consensus_label(a, b);
            if let Some(s) = stored {
                if s != derived {
                    return Err(CorpusError::MalformedRow {
                        line,
                        message: format!(
                            "consensus {s} contradicts coder labels ({a}, {b}) -> {derived}"
                        ),
                    });
                }
            }
            derived
        }
        (_, _, Some(s)) => s,
        (None, None, None) | (Some(_), None, None) | (None, Some(_), None) => {
            return Err(CorpusError::MalformedRow {
                line,
                message: "missing consensus and coder labels".to_string(),
            })
        }
    };
    Ok(LabeledResponse {
        response_id,
        learner_id,
        lesson_id,
        item_id,
        text,
        coder_a,
        coder_b,
        consensus,
        mcq_correct,
    })
}

fn parse_opt_label(cell: &str, line: usize) -> Result<Option<Label>, CorpusError> {
    let t = cell.trim();
    if t.is_empty() {
        return Ok(None);
    }
    Label::parse(t).map(Some).map_err(|e| match e {
        CorpusError::UnknownLabel(tok) => CorpusError::MalformedRow {
            line,
            message: format!("unknown label token {tok:?}"),
        },
        other => other,
    })
}

fn parse_opt_bool(cell: &str, line: usize) -> Result<Option<bool>, CorpusError> {
    match cell.trim() {
        "" => Ok(None),
        "0" | "false" => Ok(Some(false)),
        "1" | "true" => Ok(Some(true)),
        other => Err(CorpusError::MalformedRow {
            line,
            message: format!("mcq_correct must be \"0\", \"1\" or empty, got {other:?}"),
        }),
    }
}

fn load_csv(file: File) -> Result<Vec<LabeledResponse>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedRow {
            line: 1,
            message: format!("cannot read header row: {e}"),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| col(name).ok_or_else(|| CorpusError::MissingColumn(name.into()));
    let idx_response = required("response_id")?;
    let idx_learner = required("learner_id")?;
    let idx_text = required("text")?;
    let idx_lesson = col("lesson_id");
    let idx_item = col("item_id");
    let idx_a = col("coder_a");
    let idx_b = col("coder_b");
    let idx_consensus = col("consensus");
    let idx_mcq = col("mcq_correct");
    if idx_consensus.is_none() && (idx_a.is_none() || idx_b.is_none()) {
        return Err(CorpusError::MissingColumn(
            "consensus (or both coder_a and coder_b)".to_string(),
        ));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header occupies line 1
        let record = record.map_err(|e| CorpusError::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        let cell = |idx: Option<usize>| idx.and_then(|j| record.get(j)).unwrap_or("");
        let row = RawRow {
            line,
            response_id: cell(Some(idx_response)).trim().to_string(),
            learner_id: cell(Some(idx_learner)).trim().to_string(),
            lesson_id: cell(idx_lesson).trim().to_string(),
            item_id: cell(idx_item).trim().to_string(),
            text: cell(Some(idx_text)).to_string(),
            coder_a: parse_opt_label(cell(idx_a), line)?,
            coder_b: parse_opt_label(cell(idx_b), line)?,
            consensus: parse_opt_label(cell(idx_consensus), line)?,
            mcq_correct: parse_opt_bool(cell(idx_mcq), line)?,
        };
        out.push(finish_row(row, &mut seen)?);
    }
    Ok(out)
}

fn load_jsonl(file: File) -> Result<Vec<LabeledResponse>, CorpusError> {
    let reader = BufReader::new(file);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line_result) in reader.lines().enumerate() {
        let line = i + 1;
        let raw = line_result.map_err(|e| CorpusError::Io {
            path: format!("<line {line}>"),
            source: e,
        })?;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| CorpusError::MalformedRow {
                line,
                message: format!("invalid JSON: {e}"),
            })?;
        let get_str = |key: &str| -> String {
            value
                .get(key)
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_string()
        };
        let get_label = |key: &str| -> Result<Option<Label>, CorpusError> {
            match value.get(key) {
                None | Some(serde_json::Value::Null) => Ok(None),
                Some(serde_json::Value::String(s)) => parse_opt_label(s, line),
                Some(serde_json::Value::Number(n)) => {
                    let x = n.as_f64().unwrap_or(f64::NAN);
                    if x == 0.0 {
                        Ok(Some(Label::Human))
                    } else if x == 0.5 {
                        Ok(Some(Label::Uncertain))
                    } else if x == 1.0 {
                        Ok(Some(Label::Llm))
                    } else {
                        Err(CorpusError::MalformedRow {
                            line,
                            message: format!("unknown numeric label {x}"),
                        })
                    }
                }
                Some(other) => Err(CorpusError::MalformedRow {
                    line,
                    message: format!("label field {key:?} has unsupported type: {other}"),
                }),
            }
        };
        let mcq = match value.get("mcq_correct") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::Bool(b)) => Some(*b),
            Some(serde_json::Value::Number(n)) => match n.as_f64() {
                Some(x) if x == 0.0 => Some(false),
                Some(x) if x == 1.0 => Some(true),
                _ => {
                    return Err(CorpusError::MalformedRow {
                        line,
                        message: format!("mcq_correct must be boolean or 0/1, got {n}"),
                    })
                }
            },
            Some(serde_json::Value::String(s)) => parse_opt_bool(s, line)?,
            Some(other) => {
                return Err(CorpusError::MalformedRow {
                    line,
                    message: format!("mcq_correct has unsupported type: {other}"),
                })
            }
        };
        let row = RawRow {
            line,
            response_id: get_str("response_id").trim().to_string(),
            learner_id: get_str("learner_id").trim().to_string(),
            lesson_id: get_str("lesson_id").trim().to_string(),
            item_id: get_str("item_id").trim().to_string(),
            text: get_str("text"),
            coder_a: get_label("coder_a")?,
            coder_b: get_label("coder_b")?,
            consensus: get_label("consensus")?,
            mcq_correct: mcq,
        };
        out.push(finish_row(row, &mut seen)?);
    }
    Ok(out)
}

/// Cohen's kappa for one class under one-vs-rest binarization.
///
/// Both sequences are binarized as `label == target`; kappa is
/// `(p_o - p_e) / (1 - p_e)` with the observed and chance agreement taken
/// from the 2x2 contingency table. Identical non-constant sequences yield
/// exactly 1.0. When the expected agreement is exactly 1 (both coders
/// constant on the same side) kappa is undefined and an error is returned.
pub fn cohens_kappa_binary(
    labels_a: &[Label],
    labels_b: &[Label],
    target: Label,
) -> Result<f64, CorpusError> {
    if labels_a.len() != labels_b.len() || labels_a.len() < 2 {
        return Err(CorpusError::LengthMismatch {
            a: labels_a.len(),
            b: labels_b.len(),
        });
    }
    let mut both_pos = 0u64; // a positive, b positive
    let mut a_only = 0u64; // a positive, b negative
    let mut b_only = 0u64; // a negative, b positive
    let mut both_neg = 0u64;
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        match (a == target, b == target) {
            (true, true) => both_pos += 1,
            (true, false) => a_only += 1,
            (false, true) => b_only += 1,
            (false, false) => both_neg += 1,
        }
    }
    kappa_from_table(both_pos, a_only, b_only, both_neg)
}

/// Kappa from 2x2 contingency counts (both-positive, a-only, b-only,
/// both-negative). Exposed so callers can compute kappa from tabulated
/// counts directly.
pub fn kappa_from_table(
    both_pos: u64,
    a_only: u64,
    b_only: u64,
    both_neg: u64,
) -> Result<f64, CorpusError> {
    let n = both_pos + a_only + b_only + both_neg;
    if n < 2 {
        return Err(CorpusError::LengthMismatch {
            a: n as usize,
            b: n as usize,
        });
    }
    // Integer test for p_e == 1 so the degenerate case is exact:
    // p_e = [(a+b)(a+c) + (c+d)(b+d)] / n^2.
    let chance_num =
        (both_pos + a_only) * (both_pos + b_only) + (b_only + both_neg) * (a_only + both_neg);
    if chance_num == n * n {
        return Err(CorpusError::UndefinedKappa);
    }
    let n_f = n as f64;
    let observed = (both_pos + both_neg) as f64 / n_f;
    let expected = chance_num as f64 / (n_f * n_f);
    Ok((observed - expected) / (1.0 - expected))
}

/// Per-class inter-rater reliability over the rows where both coders
/// labeled. Returns `(label, kappa-or-undefined)` in class order.
pub fn irr_by_class(corpus: &Corpus) -> Vec<(Label, Result<f64, CorpusError>)> {
    let pairs: Vec<(Label, Label)> = corpus
        .responses()
        .iter()
        .filter_map(|r| Some((r.coder_a?, r.coder_b?)))
        .collect();
    Label::ALL
        .iter()
        .map(|&target| {
            let a: Vec<Label> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<Label> = pairs.iter().map(|p| p.1).collect();
            (target, cohens_kappa_binary(&a, &b, target))
        })
        .collect()
}

/// Splits a corpus at the learner level.
///
/// Unique learner ids are shuffled deterministically by `seed`; the first
/// `ceil(ratio * L)` learners' responses form the training side and the
/// remainder the test side. No learner appears on both sides, and response
/// order within each side follows the input corpus.
pub fn learner_level_split(
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
) -> Result<SplitResult, CorpusError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut learners = corpus.learner_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    learners.shuffle(&mut rng);
    let n_train = (ratio * learners.len() as f64).ceil() as usize;
    let train_set: HashSet<&str> = learners[..n_train].iter().map(String::as_str).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in corpus.responses() {
        if train_set.contains(r.learner_id.as_str()) {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    let prov = |tag: &str| Provenance {
        source: format!("{} [{tag}]", corpus.provenance().source),
        format: corpus.provenance().format.clone(),
    };
    Ok(SplitResult {
        train: Corpus::from_responses(train, prov("train"))?,
        test: Corpus::from_responses(test, prov("test"))?,
        seed,
        ratio,
    })
}

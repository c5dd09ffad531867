//! Shared helpers for integration tests: deterministic synthetic corpora
//! styled after the annotation rubric, confusion-matrix-shaped fixture
//! sets, and an independent metric oracle.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sleuth::corpus::{consensus_label, Corpus, Label, LabeledResponse, Provenance};

const CASUAL: &[&str] = &[
    "i", "think", "the", "student", "wants", "to", "work", "hard", "because", "rewards",
    "help", "him", "stay", "motivated", "math", "can", "be", "tough", "but", "we", "keep",
    "trying", "my", "plan", "is", "praise", "good", "effort", "and", "give", "small",
    "goals", "so", "he", "feels", "better", "about", "it", "maybe", "just", "talk", "with",
    "her", "after", "class", "really", "nice", "way", "will", "try", "this", "also", "me",
    "our", "need", "more", "practice", "time", "fun", "games", "make", "things", "easy",
];

const HEADERS: &[&str] = &[
    "Positive Reinforcement",
    "Personal Connection",
    "Goal Setting",
    "Collaborative Support",
    "Interest Alignment",
    "Constructive Feedback",
    "Growth Mindset",
    "Structured Guidance",
];

const FORMAL: &[&str] = &[
    "acknowledges", "the", "achievement", "and", "strengthens", "intrinsic", "motivation",
    "connecting", "task", "to", "personal", "interests", "creates", "a", "compelling",
    "association", "that", "sustains", "engagement", "providing", "clear", "expectations",
    "reduces", "frustration", "while", "building", "confidence", "tailored", "support",
    "ensures", "consistent", "progress", "across", "lessons", "recognizing", "effort",
    "reinforces", "productive", "study", "habits",
];

const MARKERS: &[&str] = &["Additionally", "Moreover", "Furthermore", "Overall", "Ultimately"];

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Swaps two adjacent inner letters of one longish word, which usually
/// produces an out-of-lexicon token.
fn inject_typo(text: &str, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = text.split(' ').collect();
    let candidates: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| w.chars().count() >= 5 && w.chars().all(|c| c.is_ascii_alphabetic()))
        .map(|(i, _)| i)
        .collect();
    let Some(&idx) = candidates.choose(rng) else {
        return text.to_string();
    };
    let mut chars: Vec<char> = words[idx].chars().collect();
    let pos = rng.random_range(1..chars.len() - 2);
    chars.swap(pos, pos + 1);
    let mut out = words.clone();
    let swapped: String = chars.into_iter().collect();
    out[idx] = &swapped;
    out.join(" ")
}

/// Casual, typo-prone, first-person text in the human style of the rubric.
pub fn human_text(rng: &mut ChaCha8Rng) -> String {
    let n_sentences = rng.random_range(1..=3);
    let mut sentences = Vec::new();
    for _ in 0..n_sentences {
        let n_words = rng.random_range(5..=12);
        let mut words: Vec<String> = (0..n_words)
            .map(|_| CASUAL.choose(rng).unwrap().to_string())
            .collect();
        if rng.random_bool(0.4) {
            words[0] = capitalize(&words[0]);
        }
        let mut sentence = words.join(" ");
        if rng.random_bool(0.7) {
            sentence.push('.');
        }
        sentences.push(sentence);
    }
    let text = sentences.join(" ");
    if rng.random_bool(0.6) {
        inject_typo(&text, rng)
    } else {
        text
    }
}

fn formal_sentence(rng: &mut ChaCha8Rng) -> String {
    let n_words = rng.random_range(10..=18);
    let mut words: Vec<String> = (0..n_words)
        .map(|_| FORMAL.choose(rng).unwrap().to_string())
        .collect();
    words[0] = capitalize(&words[0]);
    let comma_at = n_words / 2;
    words[comma_at] = format!("{},", words[comma_at]);
    format!("{}.", words.join(" "))
}

/// Bullet-, header-, or marker-styled text in the LLM style of the rubric.
pub fn llm_text(rng: &mut ChaCha8Rng) -> String {
    let style = rng.random_range(0..3);
    let n_items = rng.random_range(2..=4);
    let mut parts = Vec::new();
    for _ in 0..n_items {
        let mut sentence = formal_sentence(rng);
        if rng.random_bool(0.5) {
            let marker = MARKERS.choose(rng).unwrap();
            sentence = format!("{marker}, {}", lower_first(&sentence));
        }
        match style {
            0 => parts.push(format!("- {sentence}")),
            1 => {
                let header = HEADERS.choose(rng).unwrap();
                parts.push(format!("{header}: {sentence}"));
            }
            _ => parts.push(sentence),
        }
    }
    let sep = if style == 2 { " " } else { "\n" };
    let text = parts.join(sep);
    if rng.random_bool(0.25) {
        format!("\u{201C}{text}\u{201D}")
    } else {
        text
    }
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Builds a two-class synthetic corpus: `n_human` casual texts and
/// `n_llm` machine-styled texts spread over `learners` learners.
pub fn synthetic_corpus(n_human: usize, n_llm: usize, learners: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_human + n_llm);
    let mut remaining_human = n_human;
    let mut remaining_llm = n_llm;
    for i in 0..(n_human + n_llm) {
        let is_llm = if remaining_llm == 0 {
            false
        } else if remaining_human == 0 {
            true
        } else {
            i % 2 == 1
        };
        if is_llm {
            remaining_llm -= 1;
        } else {
            remaining_human -= 1;
        }
        let (text, label) = if is_llm {
            (llm_text(&mut rng), Label::Llm)
        } else {
            (human_text(&mut rng), Label::Human)
        };
        rows.push(LabeledResponse {
            response_id: format!("syn{i:05}"),
            learner_id: format!("learner{:04}", i % learners),
            lesson_id: "motivational-strategies".to_string(),
            item_id: format!("item{}", i % 4),
            text,
            coder_a: Some(label),
            coder_b: Some(label),
            consensus: consensus_label(label, label),
            mcq_correct: None,
        });
    }
    Corpus::from_responses(
        rows,
        Provenance {
            source: format!("<synthetic seed={seed}>"),
            format: "synthetic".to_string(),
        },
    )
    .unwrap()
}

/// Builds a corpus plus provider categories realizing an exact confusion
/// matrix: `counts[t][p]` responses with true class `t` whose provider
/// verdict maps to class `p`.
pub fn corpus_and_categories_from_matrix(
    counts: [[usize; 3]; 3],
) -> (Corpus, BTreeMap<String, String>) {
    let category_for = ["Human", "Mixed", "AI"];
    let mut rows = Vec::new();
    let mut categories = BTreeMap::new();
    let mut i = 0usize;
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let id = format!("fix{i:05}");
                let label = Label::from_index(t).unwrap();
                rows.push(LabeledResponse {
                    response_id: id.clone(),
                    learner_id: format!("fl{:03}", i % 109),
                    lesson_id: "motivational-strategies".to_string(),
                    item_id: format!("item{}", i % 4),
                    text: format!("fixture response number {i} with unique content"),
                    coder_a: Some(label),
                    coder_b: Some(label),
                    consensus: label,
                    mcq_correct: None,
                });
                categories.insert(id, category_for[p].to_string());
                i += 1;
            }
        }
    }
    let corpus = Corpus::from_responses(
        rows,
        Provenance {
            source: "<matrix fixture>".to_string(),
            format: "synthetic".to_string(),
        },
    )
    .unwrap();
    (corpus, categories)
}

/// Independent recomputation of every report quantity from first
/// principles. Kept free of any `sleuth::evaluation` call so it can serve
/// as an oracle for it.
pub struct OracleReport {
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub support: [usize; 3],
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

pub fn oracle_report(y_true: &[Label], y_pred: &[Label]) -> OracleReport {
    let mut counts = [[0usize; 3]; 3];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[t.index()][p.index()] += 1;
    }
    let total = y_true.len() as f64;
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    let mut support = [0usize; 3];
    for c in 0..3 {
        let tp = counts[c][c] as f64;
        let col: f64 = (0..3).map(|r| counts[r][c] as f64).sum();
        let row: f64 = counts[c].iter().map(|&v| v as f64).sum();
        support[c] = row as usize;
        precision[c] = if col > 0.0 { tp / col } else { 0.0 };
        recall[c] = if row > 0.0 { tp / row } else { 0.0 };
        f1[c] = if precision[c] + recall[c] > 0.0 {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        } else {
            0.0
        };
    }
    let correct: usize = (0..3).map(|c| counts[c][c]).sum();
    let weighted = |m: &[f64; 3]| -> f64 {
        (0..3).map(|c| support[c] as f64 * m[c]).sum::<f64>() / total
    };
    OracleReport {
        precision,
        recall,
        f1,
        support,
        accuracy: correct as f64 / total,
        macro_precision: precision.iter().sum::<f64>() / 3.0,
        macro_recall: recall.iter().sum::<f64>() / 3.0,
        macro_f1: f1.iter().sum::<f64>() / 3.0,
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
    }
}

/// Two-decimal rounding as used in the published tables.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

//! The 13-feature stylometric vector operationalizing the annotation
//! rubric's writing-style signals.
//!
//! Features cover length and readability (average word/sentence length,
//! Flesch Reading Ease, Flesch-Kincaid grade), punctuation habits, text
//! formatting (quote-wrapping, list/bullet structure), and lexical signals
//! of human vs. machine authorship (first-person voice, misspellings,
//! capitalization lapses, vocabulary diversity, stock LLM discourse
//! markers). Extraction is pure and deterministic; a fitted
//! [`FeatureSchema`] standardizes vectors to z-scores for training.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};

/// Number of stylometric features.
pub const FEATURE_COUNT: usize = 13;

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "avg_word_length",
    "avg_sentence_length",
    "flesch_reading_ease",
    "flesch_kincaid_grade",
    "punctuation_density",
    "comma_rate",
    "quote_wrapped",
    "list_formatting",
    "first_person_rate",
    "misspelling_rate",
    "capitalization_irregularity",
    "type_token_ratio",
    "llm_marker_rate",
];

/// Default first-person tokens (matched case-insensitively as whole words).
pub const FIRST_PERSON_TOKENS: [&str; 8] = ["i", "i'm", "i'll", "i've", "me", "my", "we", "our"];

/// Default LLM discourse-marker list. Replaceable via [`load_marker_list`].
pub const DEFAULT_LLM_MARKERS: [&str; 10] = [
    "additionally",
    "moreover",
    "furthermore",
    "overall",
    "fostering",
    "crucial",
    "emphasizes",
    "leverage",
    "engaging",
    "ultimately",
];

#[derive(Debug, Error)]
pub enum StylometryError {
    #[error("text has no words or sentences; readability is unscorable")]
    Unscorable,
    #[error("cannot fit a schema on an empty feature set")]
    EmptyTrainingSet,
    #[error("feature vector has {got} components, schema expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("cannot read marker list {path}: {source}")]
    MarkerIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The 13 stylometric measurements for one response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Characters per word.
    pub avg_word_length: f64,
    /// Words per sentence.
    pub avg_sentence_length: f64,
    pub flesch_reading_ease: f64,
    pub flesch_kincaid_grade: f64,
    /// Punctuation marks per 100 characters.
    pub punctuation_density: f64,
    /// Commas per sentence.
    pub comma_rate: f64,
    /// 1 when the trimmed text starts or ends with a double quote.
    pub quote_wrapped: f64,
    /// 1 when any line is bullet-, number-, or header-formatted.
    pub list_formatting: f64,
    /// First-person pronouns per 100 words.
    pub first_person_rate: f64,
    /// Out-of-lexicon tokens per 100 words.
    pub misspelling_rate: f64,
    /// Fraction of sentences not starting with an uppercase letter.
    pub capitalization_irregularity: f64,
    /// Unique words / total words (0 for empty text).
    pub type_token_ratio: f64,
    /// LLM discourse markers per 100 words.
    pub llm_marker_rate: f64,
}

impl FeatureVector {
    pub fn zeros() -> FeatureVector {
        FeatureVector {
            avg_word_length: 0.0,
            avg_sentence_length: 0.0,
            flesch_reading_ease: 0.0,
            flesch_kincaid_grade: 0.0,
            punctuation_density: 0.0,
            comma_rate: 0.0,
            quote_wrapped: 0.0,
            list_formatting: 0.0,
            first_person_rate: 0.0,
            misspelling_rate: 0.0,
            capitalization_irregularity: 0.0,
            type_token_ratio: 0.0,
            llm_marker_rate: 0.0,
        }
    }

    /// Components in [`FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.avg_word_length,
            self.avg_sentence_length,
            self.flesch_reading_ease,
            self.flesch_kincaid_grade,
            self.punctuation_density,
            self.comma_rate,
            self.quote_wrapped,
            self.list_formatting,
            self.first_person_rate,
            self.misspelling_rate,
            self.capitalization_irregularity,
            self.type_token_ratio,
            self.llm_marker_rate,
        ]
    }
}

/// Word/sentence/syllable counts underlying the readability scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextStats {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphabetic() || c == '\'' || c == '\u{2019}'
}

fn normalize_apostrophes(s: &str) -> String {
    s.replace('\u{2019}', "'")
}

/// Splits text into sentences and word tokens.
///
/// Sentences end at runs of terminal punctuation (`.`, `!`, `?`) or at line
/// breaks, so bullet lines count as one sentence each. Words are maximal
/// alphabetic-or-apostrophe runs containing at least one letter.
pub fn segment(text: &str) -> (Vec<String>, Vec<String>) {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            flush_sentence(&mut sentences, &mut current);
            continue;
        }
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            // Absorb the rest of the terminal run ("?!", "...").
            while let Some(&next) = chars.peek() {
                if matches!(next, '.' | '!' | '?') {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            flush_sentence(&mut sentences, &mut current);
        }
    }
    flush_sentence(&mut sentences, &mut current);

    let mut words = Vec::new();
    let mut word = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if is_word_char(c) {
            word.push(c);
        } else if !word.is_empty() {
            let cleaned = normalize_apostrophes(&word);
            let cleaned = cleaned.trim_matches('\'');
            if cleaned.chars().any(|c| c.is_alphabetic()) {
                words.push(cleaned.to_string());
            }
            word.clear();
        }
    }
    (sentences, words)
}

fn flush_sentence(sentences: &mut Vec<String>, current: &mut String) {
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    current.clear();
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Heuristic syllable count: maximal vowel runs, minus a silent trailing
/// 'e' (kept when the word ends in consonant + "le"), floored at 1.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    if w.is_empty() {
        return 1;
    }
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &w {
        if is_vowel(c) {
            if !in_group {
                groups += 1;
                in_group = true;
            }
        } else {
            in_group = false;
        }
    }
    let n = w.len();
    if groups > 1 && w[n - 1] == 'e' && !is_vowel(w[n - 2]) {
        let consonant_le = n >= 3 && w[n - 2] == 'l' && !is_vowel(w[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

/// Counts sentences, words, and syllables in one pass over the segmenter
/// output. Readability scores are defined in terms of this triple.
pub fn text_stats(text: &str) -> TextStats {
    let (sentences, words) = segment(text);
    let syllables = words.iter().map(|w| count_syllables(w)).sum();
    TextStats {
        sentences: sentences.len(),
        words: words.len(),
        syllables,
    }
}

/// Flesch Reading Ease from a stats triple:
/// `206.835 - 1.015 * (words/sentences) - 84.6 * (syllables/words)`.
pub fn flesch_reading_ease_from(stats: TextStats) -> Result<f64, StylometryError> {
    if stats.words == 0 || stats.sentences == 0 {
        return Err(StylometryError::Unscorable);
    }
    let wps = stats.words as f64 / stats.sentences as f64;
    let spw = stats.syllables as f64 / stats.words as f64;
    Ok(206.835 - 1.015 * wps - 84.6 * spw)
}

pub fn flesch_reading_ease(text: &str) -> Result<f64, StylometryError> {
    flesch_reading_ease_from(text_stats(text))
}

/// Flesch-Kincaid grade level:
/// `0.39 * (words/sentences) + 11.8 * (syllables/words) - 15.59`.
pub fn flesch_kincaid_grade_from(stats: TextStats) -> Result<f64, StylometryError> {
    if stats.words == 0 || stats.sentences == 0 {
        return Err(StylometryError::Unscorable);
    }
    let wps = stats.words as f64 / stats.sentences as f64;
    let spw = stats.syllables as f64 / stats.words as f64;
    Ok(0.39 * wps + 11.8 * spw - 15.59)
}

pub fn flesch_kincaid_grade(text: &str) -> Result<f64, StylometryError> {
    flesch_kincaid_grade_from(text_stats(text))
}

static LEXICON: OnceLock<HashSet<&'static str>> = OnceLock::new();

/// Bundled English lexicon used for misspelling detection.
pub fn lexicon() -> &'static HashSet<&'static str> {
    LEXICON.get_or_init(|| {
        include_str!("../data/lexicon.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

fn in_lexicon(token_lower: &str) -> bool {
    let lex = lexicon();
    if lex.contains(token_lower) {
        return true;
    }
    // "kevin's" -> "kevin"; the list carries few possessives.
    if let Some(stem) = token_lower.split('\'').next() {
        if stem.len() < token_lower.len() && !stem.is_empty() {
            return lex.contains(stem);
        }
    }
    false
}

/// Loads a marker list from a plain-text file, one phrase per line.
/// Blank lines and `#` comments are skipped.
pub fn load_marker_list(path: &Path) -> Result<Vec<String>, StylometryError> {
    let content = std::fs::read_to_string(path).map_err(|e| StylometryError::MarkerIo {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect())
}

/// Configurable feature extractor.
///
/// The defaults match the rubric-derived marker lists; both lists can be
/// replaced from plain-text files.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    first_person: Vec<String>,
    llm_markers: Vec<String>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor {
            first_person: FIRST_PERSON_TOKENS.iter().map(|s| s.to_string()).collect(),
            llm_markers: DEFAULT_LLM_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FeatureExtractor {
    pub fn with_llm_markers(mut self, markers: Vec<String>) -> Self {
        self.llm_markers = markers.into_iter().map(|m| m.to_lowercase()).collect();
        self
    }

    /// Number of LLM-marker occurrences in `text` (the numerator of
    /// `llm_marker_rate`).
    pub fn marker_count(&self, text: &str) -> usize {
        let (_, words) = segment(text);
        let lowered: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let mut haystack = None; // built lazily for multi-word phrases
        let mut count = 0usize;
        for marker in &self.llm_markers {
            if marker.contains(' ') {
                let hay = haystack
                    .get_or_insert_with(|| normalize_whitespace(&text.to_lowercase()));
                count += count_nonoverlapping(hay, marker);
            } else {
                count += lowered.iter().filter(|w| *w == marker).count();
            }
        }
        count
    }

    /// Extracts all 13 features. Empty text yields an all-zero vector.
    pub fn extract(&self, text: &str) -> FeatureVector {
        let trimmed = text.trim();
        let (sentences, words) = segment(text);
        if trimmed.is_empty() || words.is_empty() {
            return FeatureVector::zeros();
        }
        let stats = TextStats {
            sentences: sentences.len().max(1),
            words: words.len(),
            syllables: words.iter().map(|w| count_syllables(w)).sum(),
        };
        let n_words = words.len() as f64;
        let n_sentences = stats.sentences as f64;

        let avg_word_length =
            words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / n_words;
        let avg_sentence_length = n_words / n_sentences;
        let flesch = flesch_reading_ease_from(stats).expect("nonempty text is scorable");
        let fk_grade = flesch_kincaid_grade_from(stats).expect("nonempty text is scorable");

        let total_chars = trimmed.chars().count() as f64;
        let punct_count = trimmed.chars().filter(|&c| is_punctuation(c)).count() as f64;
        let punctuation_density = 100.0 * punct_count / total_chars;
        let comma_count = trimmed.chars().filter(|&c| c == ',').count() as f64;
        let comma_rate = comma_count / n_sentences;

        let quote_wrapped = if starts_or_ends_with_double_quote(trimmed) {
            1.0
        } else {
            0.0
        };
        let list_formatting = if text.lines().any(is_list_line) { 1.0 } else { 0.0 };

        let lowered: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let first_person_count = lowered
            .iter()
            .filter(|w| self.first_person.iter().any(|t| t == *w))
            .count() as f64;
        let first_person_rate = 100.0 * first_person_count / n_words;

        let misspelled = words
            .iter()
            .filter(|w| {
                let starts_upper = w.chars().next().is_some_and(|c| c.is_uppercase());
                let has_digit = w.chars().any(|c| c.is_ascii_digit());
                if starts_upper || has_digit {
                    return false; // proper-noun / code-like tokens are exempt
                }
                !in_lexicon(&w.to_lowercase())
            })
            .count() as f64;
        let misspelling_rate = 100.0 * misspelled / n_words;

        let mut considered = 0usize;
        let mut irregular = 0usize;
        for s in &sentences {
            if let Some(first) = s.chars().find(|c| c.is_alphabetic()) {
                considered += 1;
                if first.is_lowercase() {
                    irregular += 1;
                }
            }
        }
        let capitalization_irregularity = if considered == 0 {
            0.0
        } else {
            irregular as f64 / considered as f64
        };

        let unique: HashSet<&str> = lowered.iter().map(String::as_str).collect();
        let type_token_ratio = unique.len() as f64 / n_words;

        let llm_marker_rate = 100.0 * self.marker_count(text) as f64 / n_words;

        FeatureVector {
            avg_word_length,
            avg_sentence_length,
            flesch_reading_ease: flesch,
            flesch_kincaid_grade: fk_grade,
            punctuation_density,
            comma_rate,
            quote_wrapped,
            list_formatting,
            first_person_rate,
            misspelling_rate,
            capitalization_irregularity,
            type_token_ratio,
            llm_marker_rate,
        }
    }
}

/// Extracts features with the default marker configuration.
pub fn extract_features(text: &str) -> FeatureVector {
    FeatureExtractor::default().extract(text)
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn count_nonoverlapping(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut rest = haystack;
    while let Some(pos) = rest.find(needle) {
        count += 1;
        rest = &rest[pos + needle.len()..];
    }
    count
}

fn is_punctuation(c: char) -> bool {
    matches!(
        c,
        '.' | ','
            | ';'
            | ':'
            | '!'
            | '?'
            | '\''
            | '"'
            | '('
            | ')'
            | '['
            | ']'
            | '-'
            | '\u{2013}'
            | '\u{2014}'
            | '\u{2026}'
            | '\u{2018}'
            | '\u{2019}'
            | '\u{201C}'
            | '\u{201D}'
    )
}

fn is_double_quote(c: char) -> bool {
    matches!(c, '"' | '\u{201C}' | '\u{201D}')
}

fn starts_or_ends_with_double_quote(trimmed: &str) -> bool {
    let starts = trimmed.chars().next().is_some_and(is_double_quote);
    let ends = trimmed.chars().last().is_some_and(is_double_quote);
    starts || ends
}

/// True when the line looks like a bullet, numbered item, or a
/// "Topic Word(s):" header.
fn is_list_line(line: &str) -> bool {
    let t = line.trim_start();
    if t.is_empty() {
        return false;
    }
    // Bullet glyphs and "- " dashes.
    if let Some(rest) = t.strip_prefix(['\u{2022}', '*', '\u{2013}', '\u{2014}']) {
        if rest.starts_with(' ') || rest.is_empty() {
            return true;
        }
    }
    if t.starts_with("- ") {
        return true;
    }
    // Numbered prefix: digits followed by '.' or ')' and a space.
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if (rest.starts_with('.') || rest.starts_with(')'))
            && rest[1..].starts_with(' ')
        {
            return true;
        }
    }
    header_colon_prefix(t)
}

/// Matches one to three capitalized words immediately followed by a colon,
/// e.g. "Positive Reinforcement: ...".
fn header_colon_prefix(t: &str) -> bool {
    let mut words = 0usize;
    let mut chars = t.chars().peekable();
    loop {
        match chars.peek() {
            Some(c) if c.is_uppercase() => {}
            _ => return false,
        }
        chars.next();
        while let Some(&c) = chars.peek() {
            if c.is_alphabetic() || c == '\'' || c == '\u{2019}' || c == '-' {
                chars.next();
            } else {
                break;
            }
        }
        words += 1;
        match chars.next() {
            Some(':') => {
                let next = chars.next();
                return next.is_none() || next == Some(' ');
            }
            Some(' ') if words < 3 => continue,
            _ => return false,
        }
    }
}

/// Ordered feature names with per-feature standardization parameters
/// fitted on a training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    /// Sample standard deviations (denominator N-1).
    pub sds: Vec<f64>,
    /// Features with zero variance standardize to 0.
    pub constant: Vec<bool>,
}

impl FeatureSchema {
    /// Fits means and standard deviations on training-set features.
    pub fn fit(features: &[FeatureVector]) -> Result<FeatureSchema, StylometryError> {
        if features.is_empty() {
            return Err(StylometryError::EmptyTrainingSet);
        }
        let n = features.len() as f64;
        let mut means = vec![0.0; FEATURE_COUNT];
        for fv in features {
            for (m, x) in means.iter_mut().zip(fv.to_array()) {
                *m += x;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut sds = vec![0.0; FEATURE_COUNT];
        if features.len() > 1 {
            for fv in features {
                for ((s, x), m) in sds.iter_mut().zip(fv.to_array()).zip(&means) {
                    *s += (x - m) * (x - m);
                }
            }
            for s in &mut sds {
                *s = (*s / (n - 1.0)).sqrt();
            }
        }
        let constant = sds.iter().map(|&s| s == 0.0).collect();
        Ok(FeatureSchema {
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            means,
            sds,
            constant,
        })
    }

    /// Standardizes a feature vector to z-scores; constant features map
    /// to 0.
    pub fn apply(&self, fv: &FeatureVector) -> Vec<f64> {
        fv.to_array()
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.constant[j] {
                    0.0
                } else {
                    (x - self.means[j]) / self.sds[j]
                }
            })
            .collect()
    }
}

/// Features, labels, and ids for a corpus, aligned by row.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub response_ids: Vec<String>,
    pub learner_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub features: Vec<FeatureVector>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Extracts the feature matrix for a whole corpus.
pub fn featurize_corpus(corpus: &Corpus, extractor: &FeatureExtractor) -> FeatureSet {
    let mut set = FeatureSet {
        response_ids: Vec::with_capacity(corpus.len()),
        learner_ids: Vec::with_capacity(corpus.len()),
        labels: Vec::with_capacity(corpus.len()),
        features: Vec::with_capacity(corpus.len()),
    };
    for r in corpus.responses() {
        set.response_ids.push(r.response_id.clone());
        set.learner_ids.push(r.learner_id.clone());
        set.labels.push(r.consensus);
        set.features.push(extractor.extract(&r.text));
    }
    set
}

/// Writes a feature matrix as CSV: header `response_id` + feature names,
/// one row per response.
pub fn write_feature_csv<W: std::io::Write>(
    set: &FeatureSet,
    mut writer: W,
) -> std::io::Result<()> {
    let mut header = vec!["response_id".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    writeln!(writer, "{}", header.join(","))?;
    for (id, fv) in set.response_ids.iter().zip(&set.features) {
        let mut row = vec![id.clone()];
        row.extend(fv.to_array().iter().map(|x| format!("{x}")));
        writeln!(writer, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segment_empty() {
        let (s, w) = segment("");
        assert!(s.is_empty());
        assert!(w.is_empty());
    }

    #[test]
    fn segment_two_sentences() {
        let (s, w) = segment("Hi. Bye!");
        assert_eq!(s, vec!["Hi.", "Bye!"]);
        assert_eq!(w, vec!["Hi", "Bye"]);
    }

    #[test]
    fn segment_bullet_lines_one_sentence_each() {
        let text = "- Positive reinforcement works\n- Builds rapport\n- Keeps motivation";
        let (s, _) = segment(text);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], "- Positive reinforcement works");
    }

    #[test]
    fn syllable_traces() {
        assert_eq!(count_syllables("cat"), 1);
        assert_eq!(count_syllables("table"), 2);
        assert_eq!(count_syllables("motivation"), 4);
        assert_eq!(count_syllables("time"), 1);
        assert_eq!(count_syllables("bee"), 1);
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("whale"), 1);
    }

    #[test]
    fn flesch_single_word() {
        let score = flesch_reading_ease("cat.").unwrap();
        // 206.835 - 1.015*1 - 84.6*1 = 121.22
        assert!((score - 121.22).abs() < 1e-12, "score = {score}");
    }

    #[test]
    fn flesch_ten_words_two_sentences() {
        // Construct text with 10 words, 2 sentences, 15 syllables:
        // formula value 206.835 - 5.075 - 126.9 = 74.86.
        let text = "The tutor found his book. Nobody wanted extra help now.";
        let stats = text_stats(text);
        assert_eq!(stats.sentences, 2);
        assert_eq!(stats.words, 10);
        assert_eq!(stats.syllables, 15, "syllables: {stats:?}");
        let score = flesch_reading_ease(text).unwrap();
        assert!((score - 74.86).abs() < 1e-12, "score = {score}");
    }

    #[test]
    fn flesch_empty_unscorable() {
        assert!(matches!(
            flesch_reading_ease(""),
            Err(StylometryError::Unscorable)
        ));
    }

    #[test]
    fn readability_consistent_with_stats_triple() {
        let text = "Hello there, reader. This sentence has several multisyllabic words!";
        let stats = text_stats(text);
        let fv = extract_features(text);
        let fre = flesch_reading_ease_from(stats).unwrap();
        let fkg = flesch_kincaid_grade_from(stats).unwrap();
        assert_eq!(fv.flesch_reading_ease, fre);
        assert_eq!(fv.flesch_kincaid_grade, fkg);
    }

    #[test]
    fn misspelling_flags_out_of_lexicon_token() {
        let fv =
            extract_features("It makes the stdnut want to work in order to receive the reward");
        assert!(fv.misspelling_rate > 0.0);
        let clean =
            extract_features("It makes the student want to work in order to receive the reward");
        assert_eq!(clean.misspelling_rate, 0.0);
    }

    #[test]
    fn quote_wrapped_straight_and_curly() {
        assert_eq!(
            extract_features("\u{201C}Carla, let's work together to finish.\u{201D}")
                .quote_wrapped,
            1.0
        );
        assert_eq!(
            extract_features("\"Carla, let's work together to finish.").quote_wrapped,
            1.0
        );
        assert_eq!(
            extract_features("Carla, let's work together to finish.").quote_wrapped,
            0.0
        );
    }

    #[test]
    fn list_formatting_detects_bullets_numbers_headers() {
        assert_eq!(
            extract_features("Positive Reinforcement: Explicitly acknowledges the achievement.")
                .list_formatting,
            1.0
        );
        assert_eq!(
            extract_features("- praise the effort\n- connect to interests").list_formatting,
            1.0
        );
        assert_eq!(
            extract_features("1. Praise Kevin.\n2. Set a goal.").list_formatting,
            1.0
        );
        assert_eq!(
            extract_features("Plain prose without any structure at all.").list_formatting,
            0.0
        );
    }

    #[test]
    fn first_person_and_markers() {
        let fv = extract_features("I think my approach helps. We keep our goals small.");
        // I, my, We, our -> 4 of 10 words.
        assert!((fv.first_person_rate - 40.0).abs() < 1e-9);
        let fv = extract_features("Additionally, this fosters engagement. Moreover it is crucial.");
        assert!(fv.llm_marker_rate > 0.0);
    }

    #[test]
    fn empty_text_gives_zero_vector() {
        let fv = extract_features("   ");
        assert_eq!(fv, FeatureVector::zeros());
        assert_eq!(fv.type_token_ratio, 0.0);
    }

    #[test]
    fn schema_hand_computation() {
        let mut rows = Vec::new();
        for x in [1.0, 2.0, 3.0] {
            let mut fv = FeatureVector::zeros();
            fv.avg_word_length = x;
            rows.push(fv);
        }
        let schema = FeatureSchema::fit(&rows).unwrap();
        assert!((schema.means[0] - 2.0).abs() < 1e-15);
        assert!((schema.sds[0] - 1.0).abs() < 1e-15); // N-1 denominator
        let z: Vec<f64> = rows.iter().map(|fv| schema.apply(fv)[0]).collect();
        assert!((z[0] + 1.0).abs() < 1e-15);
        assert!(z[1].abs() < 1e-15);
        assert!((z[2] - 1.0).abs() < 1e-15);
        // All other features are constant zero -> standardized to 0.
        assert!(schema.constant[1]);
        assert_eq!(schema.apply(&rows[0])[1], 0.0);
    }

    #[test]
    fn schema_self_standardization_centers() {
        let texts = [
            "I think the reward helps him stay motivated.",
            "Additionally, the approach fosters engagement across lessons.",
            "will try to explain it casually",
            "Positive Reinforcement: Praises the achievement. Builds rapport.",
        ];
        let rows: Vec<FeatureVector> = texts.iter().map(|t| extract_features(t)).collect();
        let schema = FeatureSchema::fit(&rows).unwrap();
        for j in 0..FEATURE_COUNT {
            let mean: f64 =
                rows.iter().map(|fv| schema.apply(fv)[j]).sum::<f64>() / rows.len() as f64;
            assert!(mean.abs() < 1e-9, "feature {j} mean {mean}");
        }
    }

    #[test]
    fn marker_append_increases_count() {
        let ex = FeatureExtractor::default();
        let base = "The plan connects practice to progress.";
        let more = format!("{base} Additionally it helps.");
        assert!(ex.marker_count(&more) > ex.marker_count(base));
    }

    #[test]
    fn sentence_permutation_invariants() {
        let a = "I liked the lesson. It was engaging for Kevin! My notes helped.";
        let b = "My notes helped. I liked the lesson. It was engaging for Kevin!";
        let fa = extract_features(a);
        let fb = extract_features(b);
        assert!((fa.avg_word_length - fb.avg_word_length).abs() < 1e-12);
        assert!((fa.type_token_ratio - fb.type_token_ratio).abs() < 1e-12);
        assert!((fa.misspelling_rate - fb.misspelling_rate).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn features_finite_on_arbitrary_text(text in "\\PC{0,300}") {
            let fv = extract_features(&text);
            for (name, x) in FEATURE_NAMES.iter().zip(fv.to_array()) {
                prop_assert!(x.is_finite(), "{name} not finite on {text:?}");
                if *name != "flesch_reading_ease" && *name != "flesch_kincaid_grade" {
                    prop_assert!(x >= 0.0, "{name} negative on {text:?}");
                }
            }
            prop_assert!(fv.quote_wrapped == 0.0 || fv.quote_wrapped == 1.0);
            prop_assert!(fv.list_formatting == 0.0 || fv.list_formatting == 1.0);
            let (_, words) = segment(&text);
            if !words.is_empty() {
                prop_assert!(fv.type_token_ratio > 0.0 && fv.type_token_ratio <= 1.0);
            }
        }

        #[test]
        fn extraction_is_pure(text in "\\PC{0,200}") {
            prop_assert_eq!(extract_features(&text), extract_features(&text));
        }
    }
}

//! Clients for external detectors: a commercial AI-detection HTTP API and
//! a rubric-prompted LLM judge endpoint, plus an offline mock. Verdicts
//! are normalized to the 0 / 0.5 / 1 scale and cached on disk so a warmed
//! (or fixture-provided) cache makes evaluation fully offline and
//! deterministic.
//!
//! Cache layout: one JSON file per request content hash, grouped by
//! provider kind (`<dir>/<provider>/<sha256(endpoint, text)>.json`). The
//! fixture format is identical to the cache format; a fixtures directory
//! is consulted first and never written to. Credentials are referenced by
//! environment-variable name only and are never serialized.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, Label};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("authentication failed (HTTP {0})")]
    Auth(u16),
    #[error("rate limit exhausted after {0} attempts")]
    RateLimited(u32),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("cannot parse provider response: {0}")]
    UnparseableResponse(String),
    #[error("unmapped verdict category {0:?}")]
    UnmappedVerdict(String),
    #[error("judge reply contains no label token: {0:?}")]
    UnparseableJudgeOutput(String),
    #[error("cache I/O at {path}: {message}")]
    CacheIo { path: String, message: String },
    #[error("detector of kind {kind} cannot handle this call: {message}")]
    WrongKind { kind: String, message: String },
}

impl GatewayError {
    fn retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Network { .. }
                | GatewayError::RateLimited(_)
                | GatewayError::Http { status: 500..=599, .. }
        )
    }
}

/// The supported external detector families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    CommercialDetector,
    LlmJudge,
    Mock,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::CommercialDetector => "commercial_detector",
            ProviderKind::LlmJudge => "llm_judge",
            ProviderKind::Mock => "mock",
        }
    }
}

/// Connection and caching settings for one detector.
///
/// `credential_env` names an environment variable; the credential value
/// itself is resolved at call time and never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    /// Chat model name for the judge endpoint.
    pub model: Option<String>,
    pub credential_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Base of the exponential backoff between retries.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// Read-only cache consulted before `cache_dir`.
    pub fixtures_dir: Option<PathBuf>,
}

impl DetectorConfig {
    pub fn mock() -> DetectorConfig {
        DetectorConfig {
            kind: ProviderKind::Mock,
            endpoint: "mock://stylistic-rule".to_string(),
            model: None,
            credential_env: None,
            timeout_secs: 30,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            cache_dir: None,
            fixtures_dir: None,
        }
    }

    pub fn commercial(endpoint: &str, credential_env: &str) -> DetectorConfig {
        DetectorConfig {
            kind: ProviderKind::CommercialDetector,
            endpoint: endpoint.to_string(),
            model: None,
            credential_env: Some(credential_env.to_string()),
            ..DetectorConfig::mock()
        }
    }

    pub fn llm_judge(endpoint: &str, model: &str, credential_env: &str) -> DetectorConfig {
        DetectorConfig {
            kind: ProviderKind::LlmJudge,
            endpoint: endpoint.to_string(),
            model: Some(model.to_string()),
            credential_env: Some(credential_env.to_string()),
            ..DetectorConfig::mock()
        }
    }
}

/// A normalized external verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub label: Label,
    /// The provider's verbatim class name or reply.
    pub raw_category: String,
    pub provider: String,
    pub latency_ms: u64,
    pub cached: bool,
}

/// System instruction for the LLM judge, stating the annotation-rubric
/// signal categories and the required output tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub system: String,
}

impl Default for JudgePrompt {
    fn default() -> Self {
        JudgePrompt {
            system: "You judge whether a short answer from an online lesson was written \
by the learner or generated with a large language model. Weigh the writing-style signals \
used by the human annotation rubric. Signals of LLM generation: long, polished, heavily \
punctuated prose; bullet lists or repeated 'Heading: explanation' sections; the whole \
answer wrapped in quotation marks; near-duplicate phrasing across answers; stock \
discourse markers such as additionally, moreover, furthermore, overall, ultimately. \
Signals of human authorship: casual or incomplete sentences; first-person voice; typos \
and misspellings; missing or inconsistent capitalization; short informal replies. If the \
evidence is mixed or weak, the answer is uncertain. Reply with exactly one token: \"1\" \
if the answer is LLM-generated, \"0\" if it is human-authored, or \"0.5\" if uncertain."
                .to_string(),
        }
    }
}

impl JudgePrompt {
    pub fn from_file(path: &Path) -> std::io::Result<JudgePrompt> {
        Ok(JudgePrompt {
            system: std::fs::read_to_string(path)?,
        })
    }
}

/// Maps a commercial detector's category to the numeric label scale:
/// AI -> 1, Human -> 0, Mixed -> 0.5 (case-insensitive).
pub fn map_commercial_category(raw: &str) -> Result<Label, GatewayError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "ai" => Ok(Label::Llm),
        "human" => Ok(Label::Human),
        "mixed" => Ok(Label::Uncertain),
        _ => Err(GatewayError::UnmappedVerdict(raw.to_string())),
    }
}

/// Extracts the label token from a judge reply.
///
/// Longest match first: a reply containing "0.5" is Uncertain even though
/// it textually contains "0"; otherwise the first of "0" / "1" present
/// decides. A reply with none of the tokens is an error, never coerced.
pub fn parse_judge_reply(reply: &str) -> Result<Label, GatewayError> {
    if reply.contains("0.5") {
        Ok(Label::Uncertain)
    } else if reply.contains('0') {
        Ok(Label::Human)
    } else if reply.contains('1') {
        Ok(Label::Llm)
    } else {
        Err(GatewayError::UnparseableJudgeOutput(reply.to_string()))
    }
}

/// Programmable behavior for the mock provider: text in, raw category (or
/// judge-style reply) out.
pub type MockHandler = Arc<dyn Fn(&str) -> Result<String, String> + Send + Sync>;

/// Built-in mock rule: bullet/marker-styled text reads as AI, quote-wrapped
/// text as Mixed, anything else as Human.
pub fn default_mock_handler() -> MockHandler {
    Arc::new(|text: &str| {
        let fv = crate::stylometry::extract_features(text);
        let category = if fv.list_formatting == 1.0 || fv.llm_marker_rate > 0.0 {
            "AI"
        } else if fv.quote_wrapped == 1.0 {
            "Mixed"
        } else {
            "Human"
        };
        Ok(category.to_string())
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    version: u32,
    provider: String,
    endpoint: String,
    text_sha256: String,
    raw_category: String,
    label: Label,
}

const CACHE_VERSION: u32 = 1;

fn sha256_hex(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One external detector with retry, caching, and bounded-concurrency
/// batch execution. Safe for concurrent use.
pub struct Detector {
    config: DetectorConfig,
    prompt: JudgePrompt,
    mock: Option<MockHandler>,
    client: Option<reqwest::blocking::Client>,
    live_calls: AtomicUsize,
    cache_write_lock: Mutex<()>,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Detector, GatewayError> {
        let client = match config.kind {
            ProviderKind::Mock => None,
            _ => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(config.timeout_secs))
                    .build()
                    .map_err(|e| GatewayError::Network {
                        attempts: 0,
                        message: e.to_string(),
                    })?,
            ),
        };
        let mock = match config.kind {
            ProviderKind::Mock => Some(default_mock_handler()),
            _ => None,
        };
        Ok(Detector {
            config,
            prompt: JudgePrompt::default(),
            mock,
            client,
            live_calls: AtomicUsize::new(0),
            cache_write_lock: Mutex::new(()),
        })
    }

    /// Replaces the mock behavior (only meaningful for the mock kind).
    pub fn with_mock_handler(mut self, handler: MockHandler) -> Detector {
        self.mock = Some(handler);
        self
    }

    /// Replaces the judge prompt used by `classify` on judge detectors and
    /// by batch classification.
    pub fn with_prompt(mut self, prompt: JudgePrompt) -> Detector {
        self.prompt = prompt;
        self
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn prompt(&self) -> &JudgePrompt {
        &self.prompt
    }

    /// Number of live (non-cached) provider invocations so far.
    pub fn live_calls(&self) -> usize {
        self.live_calls.load(Ordering::SeqCst)
    }

    fn cache_key(&self, text: &str) -> (String, String) {
        let provider = self.config.kind.as_str().to_string();
        let hash = sha256_hex(&[&self.config.endpoint, text]);
        (provider, hash)
    }

    fn cache_paths(&self, text: &str) -> Vec<PathBuf> {
        let (provider, hash) = self.cache_key(text);
        let mut paths = Vec::new();
        if let Some(fixtures) = &self.config.fixtures_dir {
            paths.push(fixtures.join(&provider).join(format!("{hash}.json")));
        }
        if let Some(cache) = &self.config.cache_dir {
            paths.push(cache.join(&provider).join(format!("{hash}.json")));
        }
        paths
    }

    fn cache_lookup(&self, text: &str) -> Option<DetectorVerdict> {
        let text_hash = sha256_hex(&[text]);
        for path in self.cache_paths(text) {
            let Ok(content) = std::fs::read_to_string(&path) else {
                continue;
            };
            let Ok(entry) = serde_json::from_str::<CacheEntry>(&content) else {
                continue;
            };
            if entry.endpoint == self.config.endpoint && entry.text_sha256 == text_hash {
                return Some(DetectorVerdict {
                    label: entry.label,
                    raw_category: entry.raw_category,
                    provider: entry.provider,
                    latency_ms: 0,
                    cached: true,
                });
            }
        }
        None
    }

    fn cache_store(&self, text: &str, verdict: &DetectorVerdict) -> Result<(), GatewayError> {
        let Some(cache) = &self.config.cache_dir else {
            return Ok(());
        };
        let (provider, hash) = self.cache_key(text);
        let dir = cache.join(&provider);
        let path = dir.join(format!("{hash}.json"));
        let entry = CacheEntry {
            version: CACHE_VERSION,
            provider: verdict.provider.clone(),
            endpoint: self.config.endpoint.clone(),
            text_sha256: sha256_hex(&[text]),
            raw_category: verdict.raw_category.clone(),
            label: verdict.label,
        };
        let json = serde_json::to_string_pretty(&entry).expect("entry serializes");
        let _guard = self.cache_write_lock.lock().expect("cache lock");
        std::fs::create_dir_all(&dir).map_err(|e| GatewayError::CacheIo {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(&path, json).map_err(|e| GatewayError::CacheIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn credential(&self) -> Result<String, GatewayError> {
        let name = self.config.credential_env.as_deref().unwrap_or("");
        if name.is_empty() {
            return Err(GatewayError::MissingCredential(
                "<unset credential_env>".to_string(),
            ));
        }
        std::env::var(name).map_err(|_| GatewayError::MissingCredential(name.to_string()))
    }

    /// Classifies one text, consulting the cache first. Commercial and
    /// mock detectors map the provider category; judge detectors are
    /// queried with the configured rubric prompt.
    pub fn classify(&self, text: &str) -> Result<DetectorVerdict, GatewayError> {
        match self.config.kind {
            ProviderKind::LlmJudge => {
                let prompt = self.prompt.clone();
                self.classify_llm_judge(text, &prompt)
            }
            _ => self.classify_with(text, |raw| map_commercial_category(raw)),
        }
    }

    /// Queries the judge endpoint with `prompt` and parses the label token
    /// out of the reply.
    pub fn classify_llm_judge(
        &self,
        text: &str,
        prompt: &JudgePrompt,
    ) -> Result<DetectorVerdict, GatewayError> {
        if self.config.kind == ProviderKind::CommercialDetector {
            return Err(GatewayError::WrongKind {
                kind: self.config.kind.as_str().to_string(),
                message: "judge classification needs a judge or mock detector".to_string(),
            });
        }
        self.classify_judge_inner(text, prompt)
    }

    fn classify_judge_inner(
        &self,
        text: &str,
        prompt: &JudgePrompt,
    ) -> Result<DetectorVerdict, GatewayError> {
        if let Some(hit) = self.cache_lookup(text) {
            return Ok(hit);
        }
        let started = Instant::now();
        let raw = match self.config.kind {
            ProviderKind::Mock => self.invoke_mock(text)?,
            _ => self.with_retries(|| self.judge_request(text, prompt))?,
        };
        let label = parse_judge_reply(&raw)?;
        let verdict = DetectorVerdict {
            label,
            raw_category: raw,
            provider: self.config.kind.as_str().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            cached: false,
        };
        self.cache_store(text, &verdict)?;
        Ok(verdict)
    }

    fn classify_with<F>(&self, text: &str, map: F) -> Result<DetectorVerdict, GatewayError>
    where
        F: Fn(&str) -> Result<Label, GatewayError>,
    {
        if let Some(hit) = self.cache_lookup(text) {
            return Ok(hit);
        }
        let started = Instant::now();
        let raw = match self.config.kind {
            ProviderKind::Mock => self.invoke_mock(text)?,
            ProviderKind::CommercialDetector => {
                self.with_retries(|| self.commercial_request(text))?
            }
            ProviderKind::LlmJudge => unreachable!("judge goes through classify_llm_judge"),
        };
        let label = map(&raw)?;
        let verdict = DetectorVerdict {
            label,
            raw_category: raw,
            provider: self.config.kind.as_str().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            cached: false,
        };
        self.cache_store(text, &verdict)?;
        Ok(verdict)
    }

    fn invoke_mock(&self, text: &str) -> Result<String, GatewayError> {
        let handler = self.mock.as_ref().expect("mock detector has a handler");
        self.live_calls.fetch_add(1, Ordering::SeqCst);
        handler(text).map_err(|message| GatewayError::Network {
            attempts: 1,
            message,
        })
    }

    fn with_retries<F>(&self, call: F) -> Result<String, GatewayError>
    where
        F: Fn() -> Result<String, GatewayError>,
    {
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.live_calls.fetch_add(1, Ordering::SeqCst);
            match call() {
                Ok(raw) => return Ok(raw),
                Err(e) if e.retryable() && attempt + 1 < attempts => last = Some(e),
                Err(GatewayError::RateLimited(_)) => {
                    return Err(GatewayError::RateLimited(attempt + 1))
                }
                Err(e) => return Err(e),
            }
        }
        match last {
            Some(GatewayError::RateLimited(_)) => Err(GatewayError::RateLimited(attempts)),
            Some(e) => Err(e),
            None => unreachable!("at least one attempt runs"),
        }
    }

    fn commercial_request(&self, text: &str) -> Result<String, GatewayError> {
        let key = self.credential()?;
        let client = self.client.as_ref().expect("non-mock detector has client");
        let body = serde_json::json!({ "document": text });
        let response = client
            .post(&self.config.endpoint)
            .header("x-api-key", key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Network {
                attempts: 1,
                message: e.to_string(),
            })?;
        let value = Self::check_status(response)?;
        extract_category(&value).ok_or_else(|| {
            GatewayError::UnparseableResponse(format!(
                "no category field in response: {value}"
            ))
        })
    }

    fn judge_request(&self, text: &str, prompt: &JudgePrompt) -> Result<String, GatewayError> {
        let key = self.credential()?;
        let client = self.client.as_ref().expect("non-mock detector has client");
        let body = serde_json::json!({
            "model": self.config.model.as_deref().unwrap_or("gpt-4o"),
            "temperature": 0,
            "messages": [
                { "role": "system", "content": prompt.system },
                { "role": "user", "content": text },
            ],
        });
        let response = client
            .post(&self.config.endpoint)
            .header("Authorization", format!("Bearer {key}"))
            .json(&body)
            .send()
            .map_err(|e| GatewayError::Network {
                attempts: 1,
                message: e.to_string(),
            })?;
        let value = Self::check_status(response)?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| {
                GatewayError::UnparseableResponse(format!(
                    "no chat completion content in response: {value}"
                ))
            })
    }

    fn check_status(
        response: reqwest::blocking::Response,
    ) -> Result<serde_json::Value, GatewayError> {
        let status = response.status().as_u16();
        match status {
            200..=299 => response
                .json::<serde_json::Value>()
                .map_err(|e| GatewayError::UnparseableResponse(e.to_string())),
            401 | 403 => Err(GatewayError::Auth(status)),
            429 => Err(GatewayError::RateLimited(1)),
            _ => {
                let body = response.text().unwrap_or_default();
                let body = body.chars().take(200).collect();
                Err(GatewayError::Http { status, body })
            }
        }
    }

    /// Classifies a whole corpus with bounded concurrency, resuming from
    /// the cache. Per-response failures are collected, not fatal.
    pub fn batch_classify(&self, corpus: &Corpus) -> BatchOutcome {
        let queue: Mutex<Vec<(String, String)>> = Mutex::new(
            corpus
                .responses()
                .iter()
                .rev() // popped back-to-front, preserving corpus order
                .map(|r| (r.response_id.clone(), r.text.clone()))
                .collect(),
        );
        let verdicts: Mutex<BTreeMap<String, DetectorVerdict>> = Mutex::new(BTreeMap::new());
        let failures: Mutex<Vec<BatchFailure>> = Mutex::new(Vec::new());
        let workers = self.config.max_in_flight.max(1).min(corpus.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let item = queue.lock().expect("queue lock").pop();
                    let Some((id, text)) = item else { break };
                    match self.classify(&text) {
                        Ok(v) => {
                            verdicts.lock().expect("verdicts lock").insert(id, v);
                        }
                        Err(e) => {
                            failures.lock().expect("failures lock").push(BatchFailure {
                                response_id: id,
                                error: e.to_string(),
                            });
                        }
                    }
                });
            }
        });
        let mut failures = failures.into_inner().expect("failures lock");
        failures.sort_by(|a, b| a.response_id.cmp(&b.response_id));
        BatchOutcome {
            verdicts: verdicts.into_inner().expect("verdicts lock"),
            failures,
        }
    }
}

/// One failed response in a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub response_id: String,
    pub error: String,
}

/// Verdicts keyed by response id plus the ids that failed.
#[derive(Debug)]
pub struct BatchOutcome {
    pub verdicts: BTreeMap<String, DetectorVerdict>,
    pub failures: Vec<BatchFailure>,
}

impl BatchOutcome {
    /// Labels only, for joining with evaluation or outcomes.
    pub fn labels(&self) -> BTreeMap<String, Label> {
        self.verdicts
            .iter()
            .map(|(id, v)| (id.clone(), v.label))
            .collect()
    }
}

/// Searches common response shapes for the detector's class string.
fn extract_category(value: &serde_json::Value) -> Option<String> {
    const POINTERS: [&str; 6] = [
        "/documents/0/predicted_class",
        "/documents/0/class",
        "/predicted_class",
        "/classification",
        "/class",
        "/label",
    ];
    for p in POINTERS {
        if let Some(s) = value.pointer(p).and_then(|v| v.as_str()) {
            return Some(s.to_string());
        }
    }
    None
}

/// Writes one chat-format fine-tuning example per response: system =
/// rubric prompt, user = response text, assistant = consensus label token.
/// Returns the number of lines written.
pub fn export_finetune_dataset(
    train: &Corpus,
    prompt: &JudgePrompt,
    path: &Path,
) -> Result<usize, GatewayError> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| GatewayError::CacheIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut writer = std::io::BufWriter::new(file);
    let mut count = 0usize;
    for r in train.responses() {
        let line = serde_json::json!({
            "messages": [
                { "role": "system", "content": prompt.system },
                { "role": "user", "content": r.text },
                { "role": "assistant", "content": r.consensus.as_str() },
            ]
        });
        writeln!(writer, "{line}").map_err(|e| GatewayError::CacheIo {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        count += 1;
    }
    writer.flush().map_err(|e| GatewayError::CacheIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledResponse, Provenance};
    use proptest::prelude::*;

    fn mock_corpus(texts: &[&str]) -> Corpus {
        let responses = texts
            .iter()
            .enumerate()
            .map(|(i, t)| LabeledResponse {
                response_id: format!("r{i}"),
                learner_id: format!("s{i}"),
                lesson_id: String::new(),
                item_id: String::new(),
                text: t.to_string(),
                coder_a: None,
                coder_b: None,
                consensus: Label::Human,
                mcq_correct: None,
            })
            .collect();
        Corpus::from_responses(
            responses,
            Provenance {
                source: "<test>".to_string(),
                format: "csv".to_string(),
            },
        )
        .unwrap()
    }

    #[test]
    fn commercial_mapping_is_case_insensitive_and_total() {
        assert_eq!(map_commercial_category("AI").unwrap(), Label::Llm);
        assert_eq!(map_commercial_category("human").unwrap(), Label::Human);
        assert_eq!(map_commercial_category("MIXED").unwrap(), Label::Uncertain);
        assert!(matches!(
            map_commercial_category("robot"),
            Err(GatewayError::UnmappedVerdict(s)) if s == "robot"
        ));
    }

    #[test]
    fn judge_reply_parsing_contract() {
        assert_eq!(
            parse_judge_reply("0.5 - formal but not complex").unwrap(),
            Label::Uncertain
        );
        assert_eq!(parse_judge_reply("The answer is 1.").unwrap(), Label::Llm);
        assert_eq!(parse_judge_reply("0").unwrap(), Label::Human);
        assert!(matches!(
            parse_judge_reply("cannot determine"),
            Err(GatewayError::UnparseableJudgeOutput(_))
        ));
    }

    #[test]
    fn default_prompt_states_token_contract() {
        let p = JudgePrompt::default();
        for token in ["\"0\"", "\"0.5\"", "\"1\""] {
            assert!(p.system.contains(token), "prompt lacks {token}");
        }
    }

    #[test]
    fn mock_round_trip_caches() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = DetectorConfig::mock();
        config.cache_dir = Some(dir.path().to_path_buf());
        let detector = Detector::new(config)
            .unwrap()
            .with_mock_handler(Arc::new(|_| Ok("Mixed".to_string())));
        let v1 = detector.classify("Some answer about tutoring.").unwrap();
        assert_eq!(v1.label, Label::Uncertain);
        assert!(!v1.cached);
        let v2 = detector.classify("Some answer about tutoring.").unwrap();
        assert!(v2.cached);
        assert_eq!(v2.label, Label::Uncertain);
        assert_eq!(detector.live_calls(), 1);
    }

    #[test]
    fn warmed_cache_means_zero_live_calls() {
        let dir = tempfile::tempdir().unwrap();
        let texts = ["alpha response", "beta response", "gamma response"];
        let corpus = mock_corpus(&texts);
        let mut config = DetectorConfig::mock();
        config.cache_dir = Some(dir.path().to_path_buf());
        let warm = Detector::new(config.clone()).unwrap();
        let first = warm.batch_classify(&corpus);
        assert_eq!(first.failures.len(), 0);
        assert_eq!(warm.live_calls(), texts.len());

        let replay = Detector::new(config).unwrap();
        let second = replay.batch_classify(&corpus);
        assert_eq!(second.failures.len(), 0);
        assert_eq!(replay.live_calls(), 0, "cache hits must not invoke provider");
        assert_eq!(first.labels(), second.labels());
    }

    #[test]
    fn fixtures_dir_is_read_only_source() {
        let fixtures = tempfile::tempdir().unwrap();
        let mut writer_config = DetectorConfig::mock();
        writer_config.cache_dir = Some(fixtures.path().to_path_buf());
        let writer = Detector::new(writer_config).unwrap();
        writer.classify("needs a verdict").unwrap();

        let mut reader_config = DetectorConfig::mock();
        reader_config.fixtures_dir = Some(fixtures.path().to_path_buf());
        reader_config.cache_dir = None;
        let reader = Detector::new(reader_config)
            .unwrap()
            .with_mock_handler(Arc::new(|_| Err("must not be called".to_string())));
        let v = reader.classify("needs a verdict").unwrap();
        assert!(v.cached);
        assert_eq!(reader.live_calls(), 0);
    }

    #[test]
    fn batch_collects_partial_failures() {
        let texts: Vec<String> = (0..10).map(|i| format!("text number {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let corpus = mock_corpus(&refs);
        let detector = Detector::new(DetectorConfig::mock())
            .unwrap()
            .with_mock_handler(Arc::new(|text| {
                if text.ends_with('7') {
                    Err("simulated outage".to_string())
                } else {
                    Ok("Human".to_string())
                }
            }));
        let outcome = detector.batch_classify(&corpus);
        assert_eq!(outcome.verdicts.len(), 9);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].response_id, "r7");
    }

    #[test]
    fn judge_contract_through_mock() {
        let detector = Detector::new(DetectorConfig::mock())
            .unwrap()
            .with_mock_handler(Arc::new(|_| Ok("1".to_string())));
        let v = detector
            .classify_llm_judge("bulleted text", &JudgePrompt::default())
            .unwrap();
        assert_eq!(v.label, Label::Llm);
    }

    #[test]
    fn finetune_export_writes_chat_lines() {
        let corpus = mock_corpus(&["first answer", "second answer", "third answer"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finetune.jsonl");
        let n = export_finetune_dataset(&corpus, &JudgePrompt::default(), &path).unwrap();
        assert_eq!(n, 3);
        let content = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let messages = v.get("messages").unwrap().as_array().unwrap();
            assert_eq!(messages.len(), 3);
            assert_eq!(messages[2]["content"], "0"); // consensus Human
        }
    }

    #[test]
    fn finetune_export_llm_label_token() {
        let mut corpus = mock_corpus(&["llm styled answer"]);
        // Rebuild with an LLM consensus.
        let mut rows = corpus.responses().to_vec();
        rows[0].consensus = Label::Llm;
        corpus = Corpus::from_responses(rows, corpus.provenance().clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finetune.jsonl");
        export_finetune_dataset(&corpus, &JudgePrompt::default(), &path).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(v["messages"][2]["content"], "1");
    }

    #[test]
    fn default_mock_rule_is_deterministic_and_rubric_shaped() {
        let detector = Detector::new(DetectorConfig::mock()).unwrap();
        let bullets = "- praise the student\n- connect math to interests";
        assert_eq!(detector.classify(bullets).unwrap().label, Label::Llm);
        let casual = "will motivate him by encouraging that you can do this";
        assert_eq!(detector.classify(casual).unwrap().label, Label::Human);
        let quoted = "\u{201C}Great work today, Kevin.\u{201D}";
        assert_eq!(detector.classify(quoted).unwrap().label, Label::Uncertain);
    }

    proptest! {
        /// "0.5" is never read as "0", and extraction is single-valued.
        #[test]
        fn judge_token_parse_priority(prefix in "[a-z ]{0,12}", suffix in "[a-z ]{0,12}") {
            let reply = format!("{prefix}0.5{suffix}");
            prop_assert_eq!(parse_judge_reply(&reply).unwrap(), Label::Uncertain);
            let zero = format!("{prefix}0{suffix}");
            if !zero.contains("0.5") {
                prop_assert_eq!(parse_judge_reply(&zero).unwrap(), Label::Human);
            }
            let one = format!("{prefix}1{suffix}");
            if !one.contains('0') {
                prop_assert_eq!(parse_judge_reply(&one).unwrap(), Label::Llm);
            }
        }
    }
}

//! Extraction backends and the extraction runner.
//!
//! A backend answers one question per (note, category) pair: does this note
//! contain evidence of the symptom? Answers are note-level [`Detection`]s.

mod keyword;
mod parse;
mod prompt;
mod wire;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, GoldLabel, Note, Span};
use crate::taxonomy::SymptomCategory;
use crate::text::find_case_insensitive;

pub use keyword::keyword_match;
pub use parse::{parse_chat_response, parse_entailment_response, ChatVerdict, EntailmentVerdict};
pub use prompt::{
    build_chat_prompt, build_entailment_prompt, canonical_shots, truncate, ChatMessage, ChatPrompt, Role, Shot,
    SHOT_COUNT, SYSTEM_PROMPT,
};
pub use wire::{
    chat_request, completion_request, post_with_retry, HttpTransport, RetryPolicy, Transport, TransportError,
    API_KEY_ENV, ENDPOINT_ENV,
};

pub const DEFAULT_CHAR_LIMIT: usize = 6000;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("chat prompts need exactly {expected} exemplars, got {got}")]
    ShotCount { expected: usize, got: usize },
    #[error("backend `{0}` needs gold labels but the corpus has none")]
    NoGold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionStatus {
    Ok,
    Unparseable,
    BackendError,
    TruncatedOk,
}

/// A supporting quote. Offsets are absent when the quote could not be
/// located in the note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub quote: String,
}

impl Evidence {
    pub fn from_span(text: &str, span: Span) -> Self {
        Self { start: Some(span.start), end: Some(span.end), quote: span.slice(text).unwrap_or_default().to_string() }
    }

    /// Locates `quote` in `text`: exact match first, then case-insensitive.
    pub fn resolve(text: &str, quote: &str) -> Self {
        let range = text.find(quote).map(|s| s..s + quote.len()).or_else(|| find_case_insensitive(text, quote));
        Self { start: range.as_ref().map(|r| r.start), end: range.as_ref().map(|r| r.end), quote: quote.to_string() }
    }

    pub fn span(&self) -> Option<Span> {
        Some(Span::new(self.start?, self.end?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub note_id: String,
    pub category_id: String,
    pub present: bool,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
    pub backend_id: String,
    pub status: DetectionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl Detection {
    fn new(backend_id: &str, note: &Note, category: &SymptomCategory) -> Self {
        Self {
            note_id: note.note_id.clone(),
            category_id: category.category_id.clone(),
            present: false,
            evidence: Vec::new(),
            backend_id: backend_id.to_string(),
            status: DetectionStatus::Ok,
            raw_response: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Keyword,
    Chat,
    Entailment,
    Mock,
    NoisyMock,
}

impl BackendKind {
    pub fn is_wire(self) -> bool {
        matches!(self, BackendKind::Chat | BackendKind::Entailment)
    }
}

fn default_char_limit() -> usize {
    DEFAULT_CHAR_LIMIT
}
fn default_max_retries() -> u32 {
    4
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_parallelism() -> usize {
    4
}
fn default_seed() -> u64 {
    crate::DEFAULT_SEED
}
fn default_retry_base_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_char_limit")]
    pub char_limit: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub fp_rate: f64,
    #[serde(default)]
    pub fn_rate: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl BackendConfig {
    pub fn new(backend_id: impl Into<String>, kind: BackendKind) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind,
            endpoint: None,
            model_name: String::new(),
            char_limit: DEFAULT_CHAR_LIMIT,
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            parallelism: default_parallelism(),
            fp_rate: 0.0,
            fn_rate: 0.0,
            seed: crate::DEFAULT_SEED,
            retry_base_ms: default_retry_base_ms(),
        }
    }

    /// The built-in backends available without configuration.
    pub fn builtins() -> Vec<BackendConfig> {
        vec![BackendConfig::new("keyword", BackendKind::Keyword), BackendConfig::new("mock", BackendKind::Mock)]
    }

    /// Applies `SYMSCREEN_ENDPOINT` to wire backends.
    pub fn with_env_overrides(mut self) -> Self {
        if self.kind.is_wire() {
            if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
                self.endpoint = Some(endpoint);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        let bad = |m: String| Err(ExtractError::Config(format!("{}: {m}", self.backend_id)));
        if self.backend_id.trim().is_empty() {
            return Err(ExtractError::Config("backend_id must not be empty".into()));
        }
        if self.char_limit == 0 {
            return bad("char_limit must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        for (name, p) in [("fp_rate", self.fp_rate), ("fn_rate", self.fn_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.kind.is_wire() && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return bad("chat and entailment backends need an endpoint".into());
        }
        Ok(())
    }

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { max_retries: self.max_retries, base: Duration::from_millis(self.retry_base_ms) }
    }
}

/// Uniform draw in [0, 1) fixed by (seed, note, category).
pub fn pair_uniform(seed: u64, note_id: &str, category_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(note_id.as_bytes());
    h.update([0u8]);
    h.update(category_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

enum Engine {
    Keyword,
    Oracle { gold: HashMap<(String, String), GoldLabel>, noisy: bool },
    Wire { transport: Arc<dyn Transport>, endpoint: String },
}

/// A configured backend ready to answer (note, category) questions.
pub struct Extractor {
    config: BackendConfig,
    engine: Engine,
}

impl Extractor {
    /// Mock kinds read their oracle from the corpus gold labels; wire kinds
    /// connect over HTTP with an optional bearer token from the environment.
    pub fn new(config: BackendConfig, corpus: &Corpus) -> Result<Self, ExtractError> {
        let transport: Option<Arc<dyn Transport>> = if config.kind.is_wire() {
            let t = HttpTransport::new(Duration::from_secs(config.timeout_secs), std::env::var(API_KEY_ENV).ok())
                .map_err(ExtractError::Config)?;
            Some(Arc::new(t))
        } else {
            None
        };
        Self::build(config, corpus, transport)
    }

    pub fn with_transport(
        config: BackendConfig,
        corpus: &Corpus,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, ExtractError> {
        Self::build(config, corpus, Some(transport))
    }

    fn build(
        config: BackendConfig,
        corpus: &Corpus,
        transport: Option<Arc<dyn Transport>>,
    ) -> Result<Self, ExtractError> {
        config.validate()?;
        let engine = match config.kind {
            BackendKind::Keyword => Engine::Keyword,
            BackendKind::Mock | BackendKind::NoisyMock => {
                if corpus.gold().is_empty() && !corpus.notes().is_empty() {
                    return Err(ExtractError::NoGold(config.backend_id.clone()));
                }
                let gold =
                    corpus.gold().iter().map(|g| ((g.note_id.clone(), g.category_id.clone()), g.clone())).collect();
                Engine::Oracle { gold, noisy: config.kind == BackendKind::NoisyMock }
            }
            BackendKind::Chat | BackendKind::Entailment => Engine::Wire {
                transport: transport.expect("wire backends have a transport"),
                endpoint: config.endpoint.clone().expect("validated endpoint"),
            },
        };
        Ok(Self { config, engine })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn detect(&self, note: &Note, category: &SymptomCategory) -> Detection {
        let mut det = Detection::new(&self.config.backend_id, note, category);
        match &self.engine {
            Engine::Keyword => {
                if let Some(span) = keyword_match(category, &note.text) {
                    det.present = true;
                    det.evidence.push(Evidence::from_span(&note.text, span));
                }
            }
            Engine::Oracle { gold, noisy } => {
                let label = gold.get(&(note.note_id.clone(), category.category_id.clone()));
                let truth = label.is_some_and(|g| g.present);
                det.present = if *noisy {
                    let u = pair_uniform(self.config.seed, &note.note_id, &category.category_id);
                    if truth {
                        u >= self.config.fn_rate
                    } else {
                        u < self.config.fp_rate
                    }
                } else {
                    truth
                };
                if det.present && truth {
                    let spans = label.map(|g| g.evidence.as_slice()).unwrap_or_default();
                    det.evidence = spans.iter().map(|s| Evidence::from_span(&note.text, *s)).collect();
                }
            }
            Engine::Wire { transport, endpoint } => {
                self.detect_wire(&mut det, transport.as_ref(), endpoint, note, category)
            }
        }
        det
    }

    fn detect_wire(
        &self,
        det: &mut Detection,
        transport: &dyn Transport,
        endpoint: &str,
        note: &Note,
        category: &SymptomCategory,
    ) {
        let (text, truncated) = truncate(&note.text, self.config.char_limit);
        let model = &self.config.model_name;
        let (url, body) = match self.config.kind {
            BackendKind::Chat => {
                let shots =
                    canonical_shots(&category.category_id).and_then(|shots| build_chat_prompt(category, text, &shots));
                match shots {
                    Ok(prompt) => (wire::chat_url(endpoint), chat_request(model, &prompt)),
                    Err(e) => {
                        det.status = DetectionStatus::BackendError;
                        det.raw_response = Some(e.to_string());
                        return;
                    }
                }
            }
            _ => (wire::completion_url(endpoint), completion_request(model, &build_entailment_prompt(category, text))),
        };
        let response = match post_with_retry(transport, &url, &body, self.config.retry_policy()) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{} on {}/{}: {}", self.config.backend_id, note.note_id, category.category_id, e.message);
                det.status = DetectionStatus::BackendError;
                return;
            }
        };
        let content = match self.config.kind {
            BackendKind::Chat => wire::chat_content(&response),
            _ => wire::completion_text(&response),
        };
        let Some(content) = content else {
            det.status = DetectionStatus::BackendError;
            det.raw_response = Some(response.to_string());
            return;
        };
        det.raw_response = Some(content.to_string());
        let ok = if truncated { DetectionStatus::TruncatedOk } else { DetectionStatus::Ok };
        match self.config.kind {
            BackendKind::Chat => match parse_chat_response(content) {
                ChatVerdict::No => det.status = ok,
                ChatVerdict::Yes { quote } => {
                    det.status = ok;
                    det.present = true;
                    det.evidence.extend(quote.map(|q| Evidence::resolve(&note.text, &q)));
                }
                ChatVerdict::Unparseable => det.status = DetectionStatus::Unparseable,
            },
            _ => match parse_entailment_response(content) {
                EntailmentVerdict::Entailed => {
                    det.status = ok;
                    det.present = true;
                }
                EntailmentVerdict::NotEntailed => det.status = ok,
                EntailmentVerdict::Unparseable => det.status = DetectionStatus::Unparseable,
            },
        }
    }
}

/// Progress callback: (completed pairs, total pairs).
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// One detection per (note, category), sorted by (note_id, category_id).
/// Up to `parallelism` pairs are in flight at once; output does not depend
/// on scheduling.
pub fn run_extraction(
    extractor: &Extractor,
    corpus: &Corpus,
    categories: &[SymptomCategory],
    progress: Option<Progress<'_>>,
) -> Vec<Detection> {
    let pairs: Vec<(&Note, &SymptomCategory)> =
        corpus.notes().iter().flat_map(|n| categories.iter().map(move |c| (n, c))).collect();
    let total = pairs.len();
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(total));
    let workers = extractor.config.parallelism.clamp(1, total.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut local = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((note, category)) = pairs.get(i) else { break };
                    local.push(extractor.detect(note, category));
                    let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if let Some(report) = progress {
                        report(finished, total);
                    }
                }
                results.lock().expect("results lock").extend(local);
            });
        }
    });

    let mut out = results.into_inner().expect("results lock");
    out.sort_by(|a, b| (&a.note_id, &a.category_id).cmp(&(&b.note_id, &b.category_id)));
    out
}

//! HTTP+JSON clients for chat-completion and text-completion endpoints.

use std::time::Duration;

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::prompt::ChatPrompt;

pub const API_KEY_ENV: &str = "SYMSCREEN_API_KEY";
pub const ENDPOINT_ENV: &str = "SYMSCREEN_ENDPOINT";
pub const MAX_TOKENS: u32 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub message: String,
    /// Whether another attempt may succeed.
    pub retryable: bool,
}

/// A JSON POST. Implementations must be safe to share between threads.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value) -> Result<Value, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(timeout: Duration, api_key: Option<String>) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder().timeout(timeout).build().map_err(|e| e.to_string())?;
        Ok(Self { client, api_key })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError { message: e.to_string(), retryable: true })?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408;
            return Err(TransportError { message: format!("HTTP {status}"), retryable });
        }
        resp.json::<Value>().map_err(|e| TransportError { message: e.to_string(), retryable: true })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
}

impl RetryPolicy {
    /// Jittered exponential delay before retry number `attempt` (0-based):
    /// `base * 2^attempt`, scaled by a factor in [0.5, 1.5).
    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self.base.saturating_mul(1u32 << attempt.min(16));
        nominal.mul_f64(rng.gen_range(0.5..1.5))
    }
}

/// Calls `transport`, retrying failures marked retryable. Returns the last
/// error once retries are exhausted.
pub fn post_with_retry(
    transport: &dyn Transport,
    url: &str,
    body: &Value,
    policy: RetryPolicy,
) -> Result<Value, TransportError> {
    let mut rng = rand::thread_rng();
    let mut attempt = 0;
    loop {
        match transport.post_json(url, body) {
            Ok(v) => return Ok(v),
            Err(e) if !e.retryable || attempt >= policy.max_retries => return Err(e),
            Err(e) => {
                log::debug!("attempt {} to {url} failed: {}", attempt + 1, e.message);
                std::thread::sleep(policy.delay(attempt, &mut rng));
                attempt += 1;
            }
        }
    }
}

fn join(endpoint: &str, path: &str) -> String {
    format!("{}{path}", endpoint.trim_end_matches('/'))
}

pub fn chat_url(endpoint: &str) -> String {
    join(endpoint, "/v1/chat/completions")
}

pub fn completion_url(endpoint: &str) -> String {
    join(endpoint, "/v1/completions")
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [super::prompt::ChatMessage],
    temperature: f64,
    max_tokens: u32,
    stop: [&'a str; 1],
}

pub fn chat_request(model: &str, prompt: &ChatPrompt) -> Value {
    serde_json::to_value(ChatRequest {
        model,
        messages: &prompt.messages,
        temperature: 0.0,
        max_tokens: MAX_TOKENS,
        stop: ["\n"],
    })
    .expect("request serializes")
}

pub fn completion_request(model: &str, prompt: &str) -> Value {
    json!({
        "model": model,
        "prompt": prompt,
        "temperature": 0.0,
        "max_tokens": MAX_TOKENS,
        "stop": ["\n"],
    })
}

pub fn chat_content(response: &Value) -> Option<&str> {
    response.pointer("/choices/0/message/content")?.as_str()
}

pub fn completion_text(response: &Value) -> Option<&str> {
    response.pointer("/choices/0/text")?.as_str()
}

//! Chat-completion requests, providers and token accounting.

pub mod fixtures;
pub mod openai;

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixtures::{FixtureStore, RecordingProvider, ReplayProvider};
pub use openai::{forbid_network, network_attempts, OpenAiProvider, API_KEY_VAR};

pub const DEFAULT_MODEL: &str = "gpt-4-0125-preview";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    Text,
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub temperature: f64,
    pub response_format: ResponseFormat,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(response_format: ResponseFormat, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model_id: DEFAULT_MODEL.to_owned(),
            temperature: DEFAULT_TEMPERATURE,
            response_format,
            messages,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is outside [0, 2]",
                self.temperature
            )));
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("request has no user message".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty model id".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of every request field.
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "model_id": self.model_id,
            "temperature": self.temperature,
            "response_format": self.response_format,
            "messages": self.messages,
        });
        let bytes = serde_json::to_vec(&canonical).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
    pub total: u64,
}

impl TokenUsage {
    pub fn new(prompt: u64, completion: u64) -> Self {
        TokenUsage { prompt, completion, total: prompt + completion }
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(self.prompt + rhs.prompt, self.completion + rhs.completion)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    #[serde(with = "crate::runner::exec::millis")]
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("environment variable {API_KEY_VAR} is not set")]
    AuthMissing,
    #[error("rate limited by the provider after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("no recorded response for request {digest}")]
    FixtureMiss { digest: String },
    #[error("network access is disabled in this mode")]
    NetworkForbidden,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    /// Errors worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::RateLimited { .. } | GatewayError::Transport(_) => true,
            GatewayError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy { base_delay: Duration::ZERO, ..Default::default() }
    }

    fn delay_before(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(2))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub digest: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Default)]
pub struct TokenLedger {
    entries: Mutex<Vec<LedgerEntry>>,
}

impl TokenLedger {
    pub fn record(&self, entry: LedgerEntry) {
        self.entries.lock().expect("ledger lock").push(entry);
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock").clone()
    }

    pub fn total(&self) -> TokenUsage {
        self.entries
            .lock()
            .expect("ledger lock")
            .iter()
            .fold(TokenUsage::default(), |acc, e| acc + e.usage)
    }

    /// Mean total tokens over entries with `label`, if any.
    pub fn mean_total(&self, label: &str) -> Option<f64> {
        let entries = self.entries.lock().expect("ledger lock");
        let matching: Vec<u64> = entries.iter().filter(|e| e.label == label).map(|e| e.usage.total).collect();
        (!matching.is_empty()).then(|| matching.iter().sum::<u64>() as f64 / matching.len() as f64)
    }
}

pub struct Gateway {
    provider: Box<dyn ChatProvider>,
    retry: RetryPolicy,
    ledger: TokenLedger,
}

impl Gateway {
    pub fn new(provider: Box<dyn ChatProvider>) -> Self {
        Gateway { provider, retry: RetryPolicy::default(), ledger: TokenLedger::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    pub fn complete_chat(&self, request: &ChatRequest, label: &str) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let digest = request.digest();
        let mut attempt = 1;
        loop {
            debug!("{} request {} ({label}), attempt {attempt}", self.provider.name(), &digest[..12]);
            match self.provider.send(request) {
                Ok(response) => {
                    self.ledger.record(LedgerEntry {
                        label: label.to_owned(),
                        digest,
                        usage: response.usage,
                    });
                    return Ok(response);
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    attempt += 1;
                    let delay = self.retry.delay_before(attempt);
                    warn!("{e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(GatewayError::RateLimited { .. }) => {
                    return Err(GatewayError::RateLimited { attempts: attempt })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Serves queued replies in order and keeps every request it receives.
#[derive(Default)]
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<Result<String, GatewayError>>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new<I: IntoIterator<Item = Result<String, GatewayError>>>(replies: I) -> Self {
        ScriptedProvider {
            replies: Mutex::new(replies.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn texts<I: IntoIterator<Item = S>, S: Into<String>>(texts: I) -> Self {
        Self::new(texts.into_iter().map(|t| Ok(t.into())))
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().expect("lock").clone()
    }
}

/// Rough token estimate for scripted replies: one token per four bytes.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.seen.lock().expect("lock").push(request.clone());
        let start = Instant::now();
        let reply = self
            .replies
            .lock()
            .expect("lock")
            .pop_front()
            .unwrap_or_else(|| Err(GatewayError::FixtureMiss { digest: request.digest() }))?;
        let prompt: u64 = request.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        Ok(ChatResponse {
            usage: TokenUsage::new(prompt, estimate_tokens(&reply)),
            text: reply,
            latency: start.elapsed(),
        })
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).send(request)
    }
}

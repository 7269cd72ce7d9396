//! Live chat-completions provider.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError, ResponseFormat, TokenUsage};

pub const API_KEY_VAR: &str = "TESTFORGE_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1";

static NETWORK_FORBIDDEN: AtomicBool = AtomicBool::new(false);
static NETWORK_ATTEMPTS: AtomicUsize = AtomicUsize::new(0);

/// Make every later live request in this process fail before connecting.
pub fn forbid_network() {
    NETWORK_FORBIDDEN.store(true, Ordering::SeqCst);
}

/// Live requests attempted so far in this process, including refused ones.
pub fn network_attempts() -> usize {
    NETWORK_ATTEMPTS.load(Ordering::SeqCst)
}

pub struct OpenAiProvider {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl OpenAiProvider {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(OpenAiProvider {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            api_key: api_key.into(),
            client,
        })
    }

    /// Reads the key from the environment only.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(GatewayError::AuthMissing)?;
        Self::new(endpoint.unwrap_or(DEFAULT_ENDPOINT), key, Duration::from_secs(180))
    }

    fn body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": messages,
        });
        if request.response_format == ResponseFormat::JsonObject {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

impl ChatProvider for OpenAiProvider {
    fn name(&self) -> &str {
        "live"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        NETWORK_ATTEMPTS.fetch_add(1, Ordering::SeqCst);
        if NETWORK_FORBIDDEN.load(Ordering::SeqCst) {
            return Err(GatewayError::NetworkForbidden);
        }
        let start = Instant::now();
        let response = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(&self.api_key)
            .json(&Self::body(request))
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if status == 429 {
            return Err(GatewayError::RateLimited { attempts: 1 });
        }
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http { status, body: text });
        }
        let latency = start.elapsed();
        let v: Value = serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))?;
        let usage = &v["usage"];
        let prompt = usage["prompt_tokens"].as_u64().unwrap_or(0);
        let completion = usage["completion_tokens"].as_u64().unwrap_or(0);
        Ok(ChatResponse {
            text: content.to_owned(),
            usage: TokenUsage::new(prompt, completion),
            latency,
        })
    }
}

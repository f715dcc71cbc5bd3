//! Text-generation backends speaking the chat-completions wire protocol.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl Sampling {
    /// Agent generation defaults.
    pub fn agent() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            top_k: Some(64),
            max_tokens: 512,
        }
    }

    /// Fixed companion sampling: low temperature, short structured reply.
    pub fn companion() -> Self {
        Self {
            temperature: 0.3,
            top_p: 1.0,
            top_k: None,
            max_tokens: 80,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::Config("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for Sampling {
    fn default() -> Self {
        Self::agent()
    }
}

/// Generated text plus, when the serving side exposes them, pooled hidden
/// states keyed by layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Completion {
    pub content: String,
    pub hidden_states: Option<BTreeMap<u32, Vec<f64>>>,
}

impl Completion {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            hidden_states: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

/// A model `M` that turns a message list into text.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        sampling: &Sampling,
    ) -> Result<Completion, BackendError>;
}

/// Where and how to reach an HTTP model server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendHandle {
    pub base_url: String,
    pub model_id: String,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Some servers reject `top_k`; leave it off for those.
    #[serde(default = "default_true")]
    pub send_top_k: bool,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_true() -> bool {
    true
}

impl BackendHandle {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            sampling: Sampling::agent(),
            timeout_secs: default_timeout(),
            send_top_k: true,
        }
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }
}

const MAX_RETRIES: u32 = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(100);

pub struct HttpBackend {
    handle: BackendHandle,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(handle: BackendHandle) -> Result<Self, BackendError> {
        handle.sampling.validate()?;
        if !(handle.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(handle.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { handle, client })
    }

    pub fn handle(&self) -> &BackendHandle {
        &self.handle
    }
}

/// Request body for `POST /v1/chat/completions`.
pub fn request_body(
    model: &str,
    messages: &[ChatMessage],
    sampling: &Sampling,
    send_top_k: bool,
) -> Value {
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": sampling.temperature,
        "top_p": sampling.top_p,
        "max_tokens": sampling.max_tokens,
    });
    if let (Some(k), true) = (sampling.top_k, send_top_k) {
        body["top_k"] = json!(k);
    }
    body
}

/// Extracts `choices[0].message.content`, plus the optional top-level
/// `hidden_states` map (`{"28": [..], ..}`) some extractor-backed servers add.
pub fn parse_chat_response(body: &str) -> Result<Completion, BackendError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let hidden_states = match value.get("hidden_states") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let map: BTreeMap<u32, Vec<f64>> = serde_json::from_value(v.clone())
                .map_err(|e| BackendError::Malformed(format!("hidden_states: {e}")))?;
            Some(map)
        }
    };
    Ok(Completion {
        content,
        hidden_states,
    })
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        messages: &[ChatMessage],
        sampling: &Sampling,
    ) -> Result<Completion, BackendError> {
        let body = request_body(
            &self.handle.model_id,
            messages,
            sampling,
            self.handle.send_top_k,
        );
        let url = self.handle.endpoint();
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.client.post(&url).json(&body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| BackendError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })?;
                    if !status.is_success() {
                        return Err(BackendError::Status {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    return parse_chat_response(&text);
                }
                // Generation is not idempotent: only retry when the request
                // never reached the server.
                Err(e) if e.is_connect() && attempt <= MAX_RETRIES => {
                    log::warn!("backend connect failed (attempt {attempt}): {e}");
                    thread::sleep(BACKOFF_BASE * 2u32.pow(attempt - 1));
                }
                Err(e) => {
                    return Err(BackendError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
            }
        }
    }
}

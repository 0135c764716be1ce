//! Language-model backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Connection or server failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// Malformed response or configuration problem.
    #[error("backend error: {0}")]
    Fatal(String),
}

pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt, doubled after each failure.
    pub initial_backoff_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_s: 1.0,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff_s: 0.0,
        }
    }

    /// Calls the backend, retrying transport failures.
    pub fn generate(&self, backend: &dyn AgentBackend, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let mut delay = self.initial_backoff_s;
        let mut last = BackendError::Transport("no attempts made".into());
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 && delay > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(delay));
                delay *= 2.0;
            }
            match backend.generate(messages) {
                Ok(text) => return Ok(text),
                Err(e @ BackendError::Fatal(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

/// Chat-completion endpoint: `{model, messages, max_tokens, temperature}`
/// to `{choices: [{message: {content}}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatBackend {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u64,
    #[serde(default = "default_http_timeout")]
    pub timeout_s: f64,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_tokens() -> u64 {
    8192
}

fn default_http_timeout() -> f64 {
    600.0
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpChatBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_s: default_http_timeout(),
        }
    }
}

impl AgentBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.model
    }

    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_s)))
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = json!({
            "model": self.model,
            "messages": messages,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
        });
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if (400..500).contains(&code) && code != 429 => {
                BackendError::Fatal(format!("HTTP {code}"))
            }
            other => BackendError::Transport(other.to_string()),
        })?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

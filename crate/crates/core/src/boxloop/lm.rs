//! Chat-completions client with retries, and response parsing.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub const ENV_ENDPOINT: &str = "BOXLOOP_LM_ENDPOINT";
pub const ENV_MODEL: &str = "BOXLOOP_LM_MODEL";
pub const ENV_API_KEY: &str = "BOXLOOP_LM_API_KEY";

/// Retries after the first attempt.
pub const RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("LM configuration: {0}")]
    Config(String),
    #[error("HTTP error: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Response(String),
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError>;
}

/// A complete exchange, persisted for offline re-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub round: usize,
    /// Proposal index, or `None` for the critic.
    pub index: Option<usize>,
    pub request: ChatRequest,
    pub response: Option<String>,
    pub error: Option<String>,
    pub attempts: usize,
}

/// HTTP client for an OpenAI-style `/chat/completions` endpoint.
pub struct HttpChat {
    pub endpoint: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChat {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint: endpoint.into(), api_key, agent }
    }

    /// Endpoint and key from the environment, with optional overrides.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self, LmError> {
        let endpoint = match endpoint {
            Some(e) => e.to_string(),
            None => std::env::var(ENV_ENDPOINT).map_err(|_| LmError::Config(format!("{ENV_ENDPOINT} is not set")))?,
        };
        Ok(Self::new(endpoint, std::env::var(ENV_API_KEY).ok(), Duration::from_secs(300)))
    }
}

/// Model name from the config or the environment.
pub fn model_from_env(configured: Option<&str>) -> Result<String, LmError> {
    configured
        .map(str::to_string)
        .or_else(|| std::env::var(ENV_MODEL).ok())
        .ok_or_else(|| LmError::Config(format!("no model configured and {ENV_MODEL} is not set")))
}

impl ChatClient for HttpChat {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut r = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            r = r.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = r.send(body.to_string()).map_err(|e| LmError::Http(e.to_string()))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| LmError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(LmError::Http(format!("status {status}: {}", truncate(&text, 300))));
        }
        parse_completion(&text)
    }
}

/// Extracts the first choice's message content.
pub fn parse_completion(body: &str) -> Result<String, LmError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| LmError::Response(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| LmError::Response("no choices[0].message.content".into()))
}

/// Calls `client` with up to [`RETRIES`] retries and exponential backoff
/// (`base`, 2·base, 4·base). Only transport errors are retried.
pub fn complete_with_retries(client: &dyn ChatClient, req: &ChatRequest, base: Duration) -> (Result<String, LmError>, usize) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(req) {
            Err(LmError::Http(_)) if attempts <= RETRIES => {
                std::thread::sleep(base * (1 << (attempts - 1)));
            }
            r => return (r, attempts),
        }
    }
}

/// The body of the last fenced code block, if any.
pub fn extract_last_code_block(text: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(lines), true) => {
                blocks.push(lines.join("\n"));
                current = None;
            }
            (Some(lines), false) => lines.push(line),
            (None, false) => {}
        }
    }
    blocks.pop().filter(|b| !b.trim().is_empty())
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

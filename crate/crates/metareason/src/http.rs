//! Blocking client for OpenAI-compatible chat-completion and embedding
//! endpoints.

use std::thread;
use std::time::{Duration, Instant};

use metareason_core::backend::{
    check_embedding_dim, BackendError, ChatBackend, EmbeddingBackend, EmbeddingResponse, GenerationRequest,
    GenerationResponse,
};
use serde::Deserialize;
use serde_json::{json, Value};

/// Retry and timeout policy for one endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
}

pub struct OpenAiClient {
    agent: ureq::Agent,
    endpoint: Endpoint,
    retry: RetryPolicy,
    /// Expected embedding length; checked on every embedding reply.
    embedding_dim: Option<usize>,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    #[serde(default)]
    model: Option<String>,
    data: Vec<EmbeddingItem>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

fn status_error(status: u16, body: &str) -> BackendError {
    let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        401 | 403 => BackendError::Auth(detail),
        429 => BackendError::RateLimited(detail),
        500..=599 | 408 => BackendError::Transport(detail),
        _ => BackendError::Protocol(detail),
    }
}

impl OpenAiClient {
    pub fn new(endpoint: Endpoint, retry: RetryPolicy, timeout: Duration) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(timeout))
                .build(),
        );
        Self {
            agent,
            endpoint,
            retry,
            embedding_dim: None,
        }
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = Some(dim);
        self
    }

    pub fn model(&self) -> &str {
        &self.endpoint.model
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn post_once(&self, path: &str, body: &Value) -> Result<String, BackendError> {
        let mut response = self
            .agent
            .post(self.url(path))
            .header("Authorization", format!("Bearer {}", self.endpoint.api_key))
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if status >= 400 {
            return Err(status_error(status, &text));
        }
        Ok(text)
    }

    /// POSTs `body`, retrying retryable failures. Returns the reply body and
    /// the number of retries spent.
    fn post(&self, path: &str, body: &Value) -> Result<(String, u32), BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Ok(text) => return Ok((text, attempt)),
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl ChatBackend for OpenAiClient {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        let mut body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
        });
        if let Some(seed) = request.seed_hint {
            body["seed"] = json!(seed);
        }
        let start = Instant::now();
        let (text, retries) = self.post("chat/completions", &body)?;
        let latency_ms = start.elapsed().as_millis() as u64;
        let reply: ChatReply =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("chat reply: {e}")))?;
        let choice = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("reply has no choices".into()))?;
        let content = choice.message.content.unwrap_or_default();
        if content.trim().is_empty() {
            return Err(BackendError::EmptyCompletion);
        }
        let usage = reply.usage.unwrap_or_default();
        Ok(GenerationResponse {
            text: content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms,
            model_id: reply.model.unwrap_or_else(|| self.endpoint.model.clone()),
            retries,
            truncated: choice.finish_reason.as_deref() == Some("length"),
        })
    }
}

impl EmbeddingBackend for OpenAiClient {
    fn embed(&self, text: &str) -> Result<EmbeddingResponse, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::Protocol("cannot embed empty text".into()));
        }
        let body = json!({"model": self.endpoint.model, "input": text});
        let start = Instant::now();
        let (raw, retries) = self.post("embeddings", &body)?;
        let latency_ms = start.elapsed().as_millis() as u64;
        let reply: EmbeddingReply =
            serde_json::from_str(&raw).map_err(|e| BackendError::Protocol(format!("embedding reply: {e}")))?;
        let vector = reply
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("reply has no embedding".into()))?
            .embedding;
        let response = EmbeddingResponse {
            vector,
            model_id: reply.model.unwrap_or_else(|| self.endpoint.model.clone()),
            prompt_tokens: reply.usage.unwrap_or_default().prompt_tokens,
            latency_ms,
            retries,
        };
        match self.embedding_dim {
            Some(dim) => check_embedding_dim(&response, dim)?,
            None => check_embedding_dim(&response, response.vector.len())?,
        }
        Ok(response)
    }
}

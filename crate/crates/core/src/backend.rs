//! Model backend interface and the deterministic mock used in tests.
//!
//! Every model call in the loop goes through [`ChatBackend`] or
//! [`EmbeddingBackend`]. Implementations report token counts and latency so the
//! loop can keep exact per-call accounting.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("embedding has dimension {got}, configured {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport failures and rate limits are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited(_))
    }
}

/// Which loop stage a call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Summarizer,
    MetaReasoner,
    Evaluator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: Role,
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub seed_hint: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub model_id: String,
    /// Transport-level retries spent before this response arrived.
    pub retries: u32,
    /// Completion stopped at `max_tokens`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub vector: Vec<f64>,
    pub model_id: String,
    pub prompt_tokens: u64,
    pub latency_ms: u64,
    pub retries: u32,
}

pub trait ChatBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

pub trait EmbeddingBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingResponse, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for &T {
    fn embed(&self, text: &str) -> Result<EmbeddingResponse, BackendError> {
        (**self).embed(text)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingResponse, BackendError> {
        (**self).embed(text)
    }
}

/// Whitespace token estimate used by the mock backends.
pub fn count_words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Keeps at most `max_tokens` whitespace-separated words.
pub fn truncate_words(text: &str, max_tokens: u32) -> (String, bool) {
    let mut seen = 0u32;
    for (idx, ch) in text.char_indices() {
        let starts_word = !ch.is_whitespace()
            && (idx == 0 || text[..idx].chars().next_back().is_some_and(char::is_whitespace));
        if starts_word {
            if seen == max_tokens {
                return (text[..idx].trim_end().to_string(), true);
            }
            seen += 1;
        }
    }
    (text.to_string(), false)
}

/// One scripted reply rule: the first rule whose `contains` occurs in the
/// prompt answers. With several `replies` they are returned in order and the
/// last one repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub replies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default_reply: String,
    #[serde(default = "default_mock_model")]
    pub model_id: String,
    #[serde(default)]
    pub latency_ms: u64,
}

fn default_mock_model() -> String {
    "mock".to_string()
}

impl MockScript {
    pub fn constant(reply: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default_reply: reply.into(),
            model_id: default_mock_model(),
            latency_ms: 0,
        }
    }

    pub fn with_rule(mut self, contains: impl Into<String>, replies: &[&str]) -> Self {
        self.rules.push(MockRule {
            contains: contains.into(),
            replies: replies.iter().map(|s| s.to_string()).collect(),
        });
        self
    }
}

/// Scripted chat backend. Deterministic given the sequence of prompts it sees.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    cursors: Vec<AtomicUsize>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let cursors = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        Self {
            script,
            cursors,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn pick(&self, prompt: &str) -> &str {
        for (rule, cursor) in self.script.rules.iter().zip(&self.cursors) {
            if rule.replies.is_empty() || !prompt.contains(rule.contains.as_str()) {
                continue;
            }
            let idx = cursor.fetch_add(1, Ordering::Relaxed);
            return &rule.replies[idx.min(rule.replies.len() - 1)];
        }
        &self.script.default_reply
    }
}

impl ChatBackend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut prompt = String::with_capacity(request.system_prompt.len() + request.user_prompt.len() + 1);
        prompt.push_str(&request.system_prompt);
        prompt.push('\n');
        prompt.push_str(&request.user_prompt);
        let reply = self.pick(&prompt);
        let (text, truncated) = truncate_words(reply, request.max_tokens);
        Ok(GenerationResponse {
            completion_tokens: count_words(&text),
            prompt_tokens: count_words(&prompt),
            text,
            latency_ms: self.script.latency_ms,
            model_id: self.script.model_id.clone(),
            retries: 0,
            truncated,
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic bag-of-words embedder. Every lowercase alphanumeric token owns
/// a Gaussian vector seeded by its hash; a text embeds to the normalized sum of
/// its token vectors, so texts sharing most words land close together. Text
/// without any token is hashed whole.
#[derive(Debug, Clone, PartialEq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub model_id: String,
}

impl HashEmbedder {
    /// Native dimension of the default live embedding model.
    pub const DEFAULT_DIM: usize = 1536;

    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            model_id: "mock-embedding".to_string(),
        }
    }

    fn add_token(&self, v: &mut [f64], token: &[u8]) {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token) ^ self.seed);
        for x in v.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += z;
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut tokens = 0;
        for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add_token(&mut v, word.to_lowercase().as_bytes());
            tokens += 1;
        }
        if tokens == 0 {
            self.add_token(&mut v, text.as_bytes());
        }
        let norm = crate::linalg::l2_norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0)
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingResponse, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::Protocol("cannot embed empty text".to_string()));
        }
        Ok(EmbeddingResponse {
            vector: self.vector(text),
            model_id: self.model_id.clone(),
            prompt_tokens: count_words(text),
            latency_ms: 0,
            retries: 0,
        })
    }
}

/// Checks a live embedding against the configured dimension.
pub fn check_embedding_dim(response: &EmbeddingResponse, expected: usize) -> Result<(), BackendError> {
    if response.vector.len() != expected {
        return Err(BackendError::Dimension {
            expected,
            got: response.vector.len(),
        });
    }
    if response.vector.iter().any(|v| !v.is_finite()) {
        return Err(BackendError::Protocol("embedding contains non-finite values".to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str, max_tokens: u32) -> GenerationRequest {
        GenerationRequest {
            role: Role::Generator,
            system_prompt: String::new(),
            user_prompt: prompt.to_string(),
            max_tokens,
            temperature: 0.7,
            top_p: 1.0,
            seed_hint: None,
        }
    }

    #[test]
    fn scripted_reply() {
        let mock = MockBackend::new(MockScript::constant("A"));
        let r = mock.generate(&request("anything", 16)).unwrap();
        assert_eq!(r.text, "A");
        assert_eq!((r.prompt_tokens, r.completion_tokens), (1, 1));
    }

    #[test]
    fn rules_match_in_order_and_sequence() {
        let script = MockScript::constant("default")
            .with_rule("evaluate", &["first", "second"])
            .with_rule("eval", &["never"]);
        let mock = MockBackend::new(script);
        let texts: Vec<String> = (0..3)
            .map(|_| mock.generate(&request("please evaluate", 16)).unwrap().text)
            .collect();
        assert_eq!(texts, ["first", "second", "second"]);
        assert_eq!(mock.generate(&request("other", 16)).unwrap().text, "default");
        assert_eq!(mock.calls(), 4);
    }

    #[test]
    fn replies_are_truncated_to_cap() {
        let mock = MockBackend::new(MockScript::constant("one two  three four"));
        let r = mock.generate(&request("x", 2)).unwrap();
        assert_eq!(r.text, "one two");
        assert!(r.truncated);
        assert_eq!(r.completion_tokens, 2);
    }

    #[test]
    fn hash_embedding_is_deterministic_and_sensitive() {
        let e = HashEmbedder::new(32, 0);
        let a = e.embed("abc").unwrap().vector;
        assert_eq!(a, e.embed("abc").unwrap().vector);
        assert_ne!(a, e.embed("abd").unwrap().vector);
        assert!((crate::linalg::l2_norm(&a) - 1.0).abs() < 1e-12);
        assert!(e.embed("  ").is_err());
    }

    #[test]
    fn embedding_dimension_guard() {
        let r = HashEmbedder::new(8, 0).embed("abc").unwrap();
        assert!(check_embedding_dim(&r, 8).is_ok());
        assert_eq!(
            check_embedding_dim(&r, 1536),
            Err(BackendError::Dimension {
                expected: 1536,
                got: 8
            })
        );
    }
}

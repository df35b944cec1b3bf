//! Client layer shared by every model role.
//!
//! Pipeline code only sees the [`CompletionClient`] and [`Embedder`] traits.
//! The production implementations ([`ChatClient`], [`EmbeddingClient`]) speak
//! the OpenAI-compatible chat-completions and embeddings protocol through a
//! pluggable [`Transport`], consult a content-addressed [`ResponseCache`]
//! first, and retry transient failures with exponential backoff.

mod cache;
mod client;
pub mod mock;
pub mod parse;
mod ratelimit;
mod transport;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheEntry, CacheMode, ResponseCache};
pub use client::{ChatClient, EmbeddingClient, RetryPolicy};
pub use ratelimit::RateLimiter;
pub use transport::{HttpResponse, HttpTransport, Transport, TransportError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay-only mode: no cached response for {role} key {key}")]
    ReplayMiss { role: Role, key: String },
    #[error("{role} request rejected with HTTP {status}: {body}")]
    Rejected { role: Role, status: u16, body: String },
    #[error("{role} request failed after {attempts} attempts: {}", log.join("; "))]
    Exhausted {
        role: Role,
        attempts: u32,
        log: Vec<String>,
    },
    #[error("malformed {role} response: {detail}")]
    MalformedResponse { role: Role, detail: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// The five model roles the pipeline binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Creator,
    Selector,
    Grader,
    Forecaster,
    Embedder,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Creator,
        Role::Selector,
        Role::Grader,
        Role::Forecaster,
        Role::Embedder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Creator => "creator",
            Role::Selector => "selector",
            Role::Grader => "grader",
            Role::Forecaster => "forecaster",
            Role::Embedder => "embedder",
        }
    }

    /// Environment variable holding this role's API key.
    pub fn api_key_var(self) -> String {
        format!("QFORGE_{}_API_KEY", self.as_str().to_ascii_uppercase())
    }

    /// Environment variable that overrides this role's endpoint.
    pub fn base_url_var(self) -> String {
        format!("QFORGE_{}_BASE_URL", self.as_str().to_ascii_uppercase())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

/// Sampling parameters; part of the cache key so changing any of them
/// never aliases an older response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

/// A model bound to a role: identifier, endpoint and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRole {
    pub role: Role,
    pub model: String,
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    #[serde(default)]
    pub params: SamplingParams,
}

impl ModelRole {
    pub fn new(role: Role, model: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            role,
            model: model.into(),
            endpoint: endpoint.into(),
            params: SamplingParams::default(),
        }
    }

    /// Applies the `QFORGE_<ROLE>_BASE_URL` override when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(self.role.base_url_var()) {
            if !url.trim().is_empty() {
                self.endpoint = url;
            }
        }
        self
    }

    /// Reads the role's API key from the environment; `None` when unset.
    pub fn api_key_from_env(&self) -> Option<String> {
        std::env::var(self.role.api_key_var()).ok().filter(|k| !k.is_empty())
    }
}

/// Text completion for the creator, selector, grader and forecaster roles.
pub trait CompletionClient: Send + Sync {
    /// Identifier recorded in reports (e.g. the grader id).
    fn model_id(&self) -> &str;

    /// Returns completion number `attempt` for `prompt`. Distinct attempts
    /// of the same prompt are independent samples and are cached separately.
    fn complete_attempt(&self, prompt: &str, attempt: u32) -> Result<String, GatewayError>;

    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        self.complete_attempt(prompt, 0)
    }
}

/// Text embedding for the embedder role.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    /// One vector per input, all of equal dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

impl<T: CompletionClient + ?Sized> CompletionClient for &T {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete_attempt(&self, prompt: &str, attempt: u32) -> Result<String, GatewayError> {
        (**self).complete_attempt(prompt, attempt)
    }
}

impl<T: CompletionClient + ?Sized> CompletionClient for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete_attempt(&self, prompt: &str, attempt: u32) -> Result<String, GatewayError> {
        (**self).complete_attempt(prompt, attempt)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        (**self).embed(texts)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        (**self).embed(texts)
    }
}

/// Checks that every vector shares the first one's dimension.
pub fn check_dimensions(vectors: &[Vec<f32>]) -> Result<(), GatewayError> {
    if let Some(first) = vectors.first() {
        let expected = first.len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != expected) {
            return Err(GatewayError::DimensionMismatch {
                expected,
                got: bad.len(),
            });
        }
    }
    Ok(())
}

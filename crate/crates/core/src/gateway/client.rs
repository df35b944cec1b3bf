use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_dimensions, CacheEntry, CacheMode, CompletionClient, Embedder, GatewayError, ModelRole, RateLimiter,
    ResponseCache, Role, Transport,
};

/// Exponential backoff schedule. Attempt `n` (1-based) that fails waits
/// `min(initial * multiplier^(n-1), max)` before the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used by tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let secs = self.initial_backoff.as_secs_f64() * factor;
        Duration::from_secs_f64(secs.min(self.max_backoff.as_secs_f64()))
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Clone)]
struct Backend {
    binding: ModelRole,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    mode: CacheMode,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    api_key: Option<String>,
}

impl Backend {
    fn new(binding: ModelRole, transport: Arc<dyn Transport>) -> Self {
        Self {
            binding,
            transport,
            cache: None,
            mode: CacheMode::Disabled,
            retry: RetryPolicy::default(),
            limiter: None,
            api_key: None,
        }
    }

    fn role(&self) -> Role {
        self.binding.role
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.binding.endpoint.trim_end_matches('/'), path)
    }

    fn cached(&self, key: &str) -> Result<Option<String>, GatewayError> {
        match (&self.cache, self.mode) {
            (Some(cache), CacheMode::ReadWrite | CacheMode::ReplayOnly) => Ok(cache.get(key)?.map(|e| e.response)),
            _ => Ok(None),
        }
    }

    fn ensure_network_allowed(&self, key: &str) -> Result<(), GatewayError> {
        if self.mode == CacheMode::ReplayOnly {
            return Err(GatewayError::ReplayMiss {
                role: self.role(),
                key: key.to_string(),
            });
        }
        Ok(())
    }

    fn store(&self, key: &str, response: &str) -> Result<(), GatewayError> {
        if let (Some(cache), CacheMode::ReadWrite) = (&self.cache, self.mode) {
            cache.put(&CacheEntry {
                key: key.to_string(),
                model: self.binding.model.clone(),
                response: response.to_string(),
                created_at: chrono::Utc::now().timestamp(),
            })?;
        }
        Ok(())
    }

    /// POSTs `body`, retrying connection failures, 429 and 5xx responses.
    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = self.url(path);
        let mut log = Vec::new();
        let attempts = self.retry.max_attempts.max(1);
        for attempt in 1..=attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.transport.post_json(&url, self.api_key.as_deref(), body) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body).map_err(|e| GatewayError::MalformedResponse {
                        role: self.role(),
                        detail: format!("invalid JSON body: {e}"),
                    });
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    log.push(format!("attempt {attempt}: HTTP {}", resp.status));
                }
                Ok(resp) => {
                    return Err(GatewayError::Rejected {
                        role: self.role(),
                        status: resp.status,
                        body: resp.body,
                    });
                }
                Err(e) => log.push(format!("attempt {attempt}: {}", e.0)),
            }
            if attempt < attempts {
                let wait = self.retry.delay_after(attempt);
                tracing::warn!(role = %self.role(), attempt, ?wait, "retrying request");
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
        }
        Err(GatewayError::Exhausted {
            role: self.role(),
            attempts,
            log,
        })
    }
}

macro_rules! builder_methods {
    () => {
        pub fn with_cache(mut self, cache: ResponseCache, mode: CacheMode) -> Self {
            self.inner.cache = Some(cache);
            self.inner.mode = mode;
            self
        }

        pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
            self.inner.retry = retry;
            self
        }

        pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
            self.inner.limiter = Some(limiter);
            self
        }

        pub fn with_api_key(mut self, key: Option<String>) -> Self {
            self.inner.api_key = key;
            self
        }

        pub fn binding(&self) -> &ModelRole {
            &self.inner.binding
        }
    };
}

/// Chat-completions client for a text-producing role.
#[derive(Clone)]
pub struct ChatClient {
    inner: Backend,
}

impl ChatClient {
    pub fn new(binding: ModelRole, transport: Arc<dyn Transport>) -> Self {
        Self {
            inner: Backend::new(binding, transport),
        }
    }

    builder_methods!();

    pub fn cache_key(&self, prompt: &str, attempt: u32) -> String {
        let b = &self.inner.binding;
        ResponseCache::key_for(&json!({
            "kind": "chat",
            "model": b.model,
            "prompt": prompt,
            "params": b.params,
            "attempt": attempt,
        }))
    }

    fn request_body(&self, prompt: &str) -> Value {
        let b = &self.inner.binding;
        let mut body = json!({
            "model": b.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = b.params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = b.params.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }
}

impl CompletionClient for ChatClient {
    fn model_id(&self) -> &str {
        &self.inner.binding.model
    }

    fn complete_attempt(&self, prompt: &str, attempt: u32) -> Result<String, GatewayError> {
        let key = self.cache_key(prompt, attempt);
        if let Some(hit) = self.inner.cached(&key)? {
            return Ok(hit);
        }
        self.inner.ensure_network_allowed(&key)?;
        let resp = self.inner.post("chat/completions", &self.request_body(prompt))?;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::MalformedResponse {
                role: self.inner.role(),
                detail: "missing choices[0].message.content".into(),
            })?
            .to_string();
        self.inner.store(&key, &text)?;
        Ok(text)
    }
}

/// Embeddings client. Vectors are cached per input text, and each request
/// carries at most `batch_size` texts.
#[derive(Clone)]
pub struct EmbeddingClient {
    inner: Backend,
    batch_size: usize,
}

impl EmbeddingClient {
    pub fn new(binding: ModelRole, transport: Arc<dyn Transport>) -> Self {
        Self {
            inner: Backend::new(binding, transport),
            batch_size: 64,
        }
    }

    builder_methods!();

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn cache_key(&self, text: &str) -> String {
        ResponseCache::key_for(&json!({
            "kind": "embedding",
            "model": self.inner.binding.model,
            "text": text,
        }))
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let role = self.inner.role();
        let malformed = |detail: String| GatewayError::MalformedResponse { role, detail };
        let body = json!({"model": self.inner.binding.model, "input": texts});
        let resp = self.inner.post("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut slots: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vector: Vec<f32> = item
                .get("embedding")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| malformed(format!("item {pos} has no numeric embedding")))?;
            let slot = slots
                .get_mut(index)
                .ok_or_else(|| malformed(format!("index {index} out of range")))?;
            *slot = Some(vector);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| malformed(format!("no embedding for input {i}"))))
            .collect()
    }
}

impl Embedder for EmbeddingClient {
    fn model_id(&self) -> &str {
        &self.inner.binding.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        let mut missing: Vec<&str> = Vec::new();
        for (slot, text) in out.iter_mut().zip(texts) {
            match self.inner.cached(&self.cache_key(text))? {
                Some(hit) => {
                    let v: Vec<f32> = serde_json::from_str(&hit)
                        .map_err(|e| GatewayError::Cache(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
                    *slot = Some(v);
                }
                None if !missing.contains(&text.as_str()) => missing.push(text),
                None => {}
            }
        }
        if let Some(first) = missing.first() {
            self.inner.ensure_network_allowed(&self.cache_key(first))?;
        }

        let mut fetched: std::collections::HashMap<&str, Vec<f32>> = Default::default();
        for batch in missing.chunks(self.batch_size) {
            let vectors = self.request(batch)?;
            for (text, v) in batch.iter().zip(vectors) {
                let encoded = serde_json::to_string(&v).expect("f32 vector serializes");
                self.inner.store(&self.cache_key(text), &encoded)?;
                fetched.insert(text, v);
            }
        }

        let vectors: Vec<Vec<f32>> = out
            .into_iter()
            .zip(texts)
            .map(|(slot, text)| slot.unwrap_or_else(|| fetched[text.as_str()].clone()))
            .collect();
        check_dimensions(&vectors)?;
        Ok(vectors)
    }
}

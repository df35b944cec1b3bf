//! In-process stand-ins for transports and clients, used by tests and
//! offline runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{CompletionClient, Embedder, GatewayError, HttpResponse, Transport, TransportError};

/// Transport that refuses every request and counts the attempts. Plugged
/// into replay-only runs to prove no request was attempted.
#[derive(Debug, Default)]
pub struct CountingTransport {
    calls: AtomicUsize,
}

impl CountingTransport {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for CountingTransport {
    fn post_json(
        &self,
        url: &str,
        _api_key: Option<&str>,
        _body: &serde_json::Value,
    ) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(TransportError(format!("network disabled: {url}")))
    }
}

type Scripted = Result<HttpResponse, TransportError>;

/// Transport that replays a fixed queue of responses and records requests.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    queue: Mutex<VecDeque<Scripted>>,
    requests: Mutex<Vec<(String, serde_json::Value)>>,
}

impl ScriptedTransport {
    pub fn new(responses: Vec<Scripted>) -> Self {
        Self {
            queue: Mutex::new(responses.into()),
            requests: Mutex::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn urls(&self) -> Vec<String> {
        self.requests.lock().unwrap().iter().map(|(u, _)| u.clone()).collect()
    }

    pub fn bodies(&self) -> Vec<serde_json::Value> {
        self.requests.lock().unwrap().iter().map(|(_, b)| b.clone()).collect()
    }
}

impl Transport for ScriptedTransport {
    fn post_json(
        &self,
        url: &str,
        _api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, TransportError> {
        self.requests.lock().unwrap().push((url.to_string(), body.clone()));
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError("script exhausted".into())))
    }
}

/// Transport answering OpenAI-style requests with a function of the
/// request body. Useful for recording deterministic cache fixtures.
pub struct FnTransport<F> {
    handler: F,
    calls: AtomicUsize,
}

impl<F> FnTransport<F>
where
    F: Fn(&str, &serde_json::Value) -> Scripted + Send + Sync,
{
    pub fn new(handler: F) -> Self {
        Self {
            handler,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Transport for FnTransport<F>
where
    F: Fn(&str, &serde_json::Value) -> Scripted + Send + Sync,
{
    fn post_json(
        &self,
        url: &str,
        _api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.handler)(url, body)
    }
}

/// Completion client backed by a closure of `(prompt, attempt)`.
pub struct FnClient<F> {
    model: String,
    handler: F,
    calls: AtomicUsize,
}

impl<F> FnClient<F>
where
    F: Fn(&str, u32) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, handler: F) -> Self {
        Self {
            model: model.into(),
            handler,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> CompletionClient for FnClient<F>
where
    F: Fn(&str, u32) -> Result<String, GatewayError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete_attempt(&self, prompt: &str, attempt: u32) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.handler)(prompt, attempt)
    }
}

/// Embedder backed by a per-text closure.
pub struct FnEmbedder<F> {
    model: String,
    handler: F,
    calls: AtomicUsize,
}

impl<F> FnEmbedder<F>
where
    F: Fn(&str) -> Result<Vec<f32>, GatewayError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, handler: F) -> Self {
        Self {
            model: model.into(),
            handler,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `embed` invocations (batches, not texts).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Embedder for FnEmbedder<F>
where
    F: Fn(&str) -> Result<Vec<f32>, GatewayError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = texts.iter().map(|t| (self.handler)(t)).collect::<Result<Vec<_>, _>>()?;
        super::check_dimensions(&out)?;
        Ok(out)
    }
}

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use anyhow::{Context as _, Result};
use qforge_core::gateway::{
    CacheMode, ChatClient, EmbeddingClient, HttpTransport, RateLimiter, ResponseCache, Role, Transport,
};
use qforge_core::Config;
use tracing::{info, warn};

use crate::GlobalArgs;

/// Resolved configuration plus shared client plumbing.
pub struct Context {
    pub config: Config,
    pub strict: bool,
    transport: OnceLock<Arc<dyn Transport>>,
    limiters: Mutex<HashMap<String, Arc<RateLimiter>>>,
}

impl Context {
    pub fn new(args: &GlobalArgs) -> Result<Self> {
        let mut config = match &args.config {
            Some(path) => Config::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => Config::default(),
        };
        if let Some(dir) = &args.cache_dir {
            config.gateway.cache_dir = dir.clone();
        }
        if args.replay_only {
            config.gateway.replay_only = true;
        }
        if let Some(seed) = args.seed {
            config.reward.seed = seed;
        }
        if args.strict {
            config.eval.strict = true;
        }
        Ok(Self {
            strict: args.strict || config.eval.strict,
            config,
            transport: OnceLock::new(),
            limiters: Mutex::new(HashMap::new()),
        })
    }

    fn transport(&self) -> Result<Arc<dyn Transport>> {
        if let Some(t) = self.transport.get() {
            return Ok(t.clone());
        }
        let t = HttpTransport::new(Duration::from_secs(self.config.gateway.timeout_secs))
            .map_err(|e| anyhow::anyhow!("creating HTTP client: {e}"))?;
        Ok(self.transport.get_or_init(|| Arc::new(t)).clone())
    }

    fn limiter(&self, endpoint: &str) -> Arc<RateLimiter> {
        let gw = &self.config.gateway;
        self.limiters
            .lock()
            .expect("limiter map poisoned")
            .entry(endpoint.to_string())
            .or_insert_with(|| Arc::new(RateLimiter::new(gw.requests_per_second, gw.burst)))
            .clone()
    }

    fn cache_mode(&self) -> CacheMode {
        if self.config.gateway.replay_only {
            CacheMode::ReplayOnly
        } else {
            CacheMode::ReadWrite
        }
    }

    fn api_key(&self, role: Role) -> Option<String> {
        let key = std::env::var(role.api_key_var()).ok().filter(|k| !k.is_empty());
        if key.is_none() && !self.config.gateway.replay_only {
            warn!(role = %role, var = %role.api_key_var(), "no API key set; sending unauthenticated requests");
        }
        key
    }

    pub fn chat(&self, role: Role) -> Result<ChatClient> {
        let binding = self.config.binding(role)?;
        info!(role = %role, model = %binding.model, endpoint = %binding.endpoint, "client");
        let limiter = self.limiter(&binding.endpoint);
        Ok(ChatClient::new(binding, self.transport()?)
            .with_cache(ResponseCache::new(&self.config.gateway.cache_dir), self.cache_mode())
            .with_retry(self.config.gateway.retry.clone())
            .with_rate_limiter(limiter)
            .with_api_key(self.api_key(role)))
    }

    pub fn embedder(&self) -> Result<EmbeddingClient> {
        let role = Role::Embedder;
        let binding = self.config.binding(role)?;
        let limiter = self.limiter(&binding.endpoint);
        Ok(EmbeddingClient::new(binding, self.transport()?)
            .with_batch_size(self.config.retrieval.embed_batch_size)
            .with_cache(ResponseCache::new(&self.config.gateway.cache_dir), self.cache_mode())
            .with_retry(self.config.gateway.retry.clone())
            .with_rate_limiter(limiter)
            .with_api_key(self.api_key(role)))
    }
}

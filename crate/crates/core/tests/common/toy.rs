//! The bundled 20-sample toy set: paths, a deterministic fake
//! OpenAI-compatible server used to record its cache, and replay clients.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use qforge_core::config::Config;
use qforge_core::corpus::{self, FieldMapping};
use qforge_core::gateway::mock::FnTransport;
use qforge_core::gateway::parse::render_prediction;
use qforge_core::gateway::{
    CacheMode, ChatClient, EmbeddingClient, HttpResponse, ResponseCache, Role, Transport, TransportError,
};
use qforge_core::{Article, ForecastSample, QuestionKind};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const EMBED_DIM: usize = 32;

pub fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

pub fn config() -> Config {
    Config::load(dir().join("qforge.toml")).expect("toy config")
}

pub fn samples() -> Vec<ForecastSample> {
    std::fs::read_to_string(dir().join("samples.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn articles() -> Vec<Article> {
    corpus::ingest(dir().join("articles.jsonl"), FieldMapping::article_schema())
        .unwrap()
        .0
}

fn h64(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    u64::from_le_bytes(hasher.finalize()[..8].try_into().unwrap())
}

/// Hashed bag-of-words vector; never all zero for non-empty text.
pub fn fake_embedding(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; EMBED_DIM];
    v[0] = 0.25;
    for w in text.split_whitespace() {
        let w: String = w
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if w.len() < 3 {
            continue;
        }
        let h = h64(&[&w]);
        v[1 + (h % (EMBED_DIM as u64 - 1)) as usize] += 1.0;
    }
    v
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

/// Forecaster behavior for `(sample, attempt)`: exact answer, an alias the
/// grader accepts, or a wrong answer, with a hash-derived probability.
/// One attempt is deliberately unparseable.
fn forecast(sample: &ForecastSample, attempt: u32, n_passages: usize) -> String {
    if sample.sample_id == "toy-07" && attempt == 1 {
        return "I would rather not give a number for this one.".into();
    }
    let h = h64(&[&sample.sample_id, &attempt.to_string()]);
    let q = ((h >> 8) % 19 + 1) as f64 * 0.05;
    let answer = match sample.question_kind {
        QuestionKind::Binary => {
            if h % 3 == 0 {
                if sample.answer == "Yes" { "No" } else { "Yes" }.to_string()
            } else {
                sample.answer.clone()
            }
        }
        QuestionKind::Freeform => match h % 10 {
            0..=4 => sample.answer.clone(),
            5 | 6 => format!("{} (per official reports)", sample.answer),
            _ => "Unknown Candidate".to_string(),
        },
    };
    render_prediction(&format!("Weighed {n_passages} passages."), &answer, q)
}

fn grade(prompt: &str) -> String {
    let response = between(prompt, "Response: ", "\n").unwrap_or_default().trim();
    let reference = between(prompt, "Reference answer: ", "\n").unwrap_or_default().trim();
    let verdict = u8::from(response.to_lowercase().starts_with(&reference.to_lowercase()));
    format!(
        "The response names the same entity: {}.\n<answer>{verdict}</answer>",
        verdict == 1
    )
}

fn ok(body: Value) -> Result<HttpResponse, TransportError> {
    Ok(HttpResponse {
        status: 200,
        body: body.to_string(),
    })
}

/// Fake server: answers chat and embedding requests deterministically.
pub fn recording_transport() -> Arc<dyn Transport> {
    let by_title: HashMap<String, ForecastSample> =
        samples().into_iter().map(|s| (s.question_title.clone(), s)).collect();
    let attempts: std::sync::Mutex<HashMap<String, u32>> = Default::default();
    Arc::new(FnTransport::new(move |url: &str, body: &Value| {
        if url.ends_with("/embeddings") {
            let data: Vec<Value> = body["input"]
                .as_array()
                .unwrap()
                .iter()
                .enumerate()
                .map(|(i, t)| json!({"index": i, "embedding": fake_embedding(t.as_str().unwrap())}))
                .collect();
            return ok(json!({ "data": data }));
        }
        let prompt = body["messages"][0]["content"].as_str().unwrap();
        let content = match body["model"].as_str().unwrap() {
            "toy-grader" => grade(prompt),
            "toy-forecaster" => {
                let title = between(prompt, "Question Title:\n", "\n").expect("title in prompt");
                let sample = &by_title[title.trim()];
                // Attempts of one prompt arrive in ascending order per sample.
                let mut seen = attempts.lock().unwrap();
                let n = seen.entry(sample.sample_id.clone()).or_insert(0);
                let attempt = *n;
                *n += 1;
                forecast(sample, attempt, prompt.matches("Relevant Passage: ").count())
            }
            other => panic!("unexpected model {other}"),
        };
        ok(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
    }))
}

pub struct Clients {
    pub forecaster: ChatClient,
    pub grader: ChatClient,
    pub embedder: EmbeddingClient,
}

pub fn clients(cfg: &Config, transport: Arc<dyn Transport>, cache: &Path, mode: CacheMode) -> Clients {
    let cache = ResponseCache::new(cache);
    Clients {
        forecaster: ChatClient::new(cfg.binding(Role::Forecaster).unwrap(), transport.clone())
            .with_cache(cache.clone(), mode),
        grader: ChatClient::new(cfg.binding(Role::Grader).unwrap(), transport.clone()).with_cache(cache.clone(), mode),
        embedder: EmbeddingClient::new(cfg.binding(Role::Embedder).unwrap(), transport)
            .with_batch_size(cfg.retrieval.embed_batch_size)
            .with_cache(cache, mode),
    }
}

/// Evaluates the toy set from its recorded cache in replay-only mode.
pub fn replay(transport: Arc<dyn Transport>) -> qforge_core::harness::EvalRun {
    let cfg = config();
    let c = clients(
        &cfg,
        transport,
        &dir().join(&cfg.gateway.cache_dir),
        CacheMode::ReplayOnly,
    );
    let index = qforge_core::Index::load(dir().join(&cfg.paths.index)).expect("toy index");
    let ctx = qforge_core::harness::RetrievalContext {
        index: &index,
        embedder: &c.embedder,
    };
    qforge_core::harness::evaluate(&samples(), &c.forecaster, &c.grader, Some(ctx), &cfg.eval).expect("toy evaluation")
}

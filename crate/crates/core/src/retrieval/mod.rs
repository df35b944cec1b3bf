//! Chunking, embedding, and temporally restricted top-k retrieval.
//!
//! Articles are split into chunks of a fixed token budget, embedded through
//! an [`Embedder`](crate::gateway::Embedder), and stored in an exact cosine
//! [`Index`]. Queries only ever consider chunks published on or before the
//! caller's cutoff date, which is one calendar month before the question's
//! resolution date.

mod index;

use std::ops::Range;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Article;
use crate::gateway::GatewayError;

pub use index::{BuildOptions, Index, ScoredChunk, INDEX_FORMAT_VERSION, INDEX_MAGIC};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid retrieval argument: {0}")]
    InvalidArgument(String),
    #[error("chunk {0} has empty text")]
    EmptyChunk(String),
    #[error("embedding failed after {completed} of {total} chunks: {source}")]
    Embedding {
        completed: usize,
        total: usize,
        #[source]
        source: GatewayError,
    },
    #[error("query embedding failed: {0}")]
    QueryEmbedding(#[source] GatewayError),
    #[error("embedding for {id} is degenerate (zero norm or non-finite entries)")]
    DegenerateEmbedding { id: String },
    #[error("embedding for {id} has dimension {got}, index expects {expected}")]
    Dimension { id: String, expected: usize, got: usize },
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A contiguous slice of an article body, at most one token budget long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub article_id: String,
    pub publish_date: NaiveDate,
    /// Parent article title and outlet, carried for prompt rendering.
    pub title: String,
    pub source: String,
    pub text: String,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffDateField {
    /// The sample's (finalized) resolution date.
    #[default]
    ResolutionDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub chunk_tokens: usize,
    /// Calendar months between the resolution date and the cutoff.
    pub cutoff_lead_months: u32,
    pub cutoff_date_field: CutoffDateField,
    pub embed_model: String,
    pub embed_batch_size: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            chunk_tokens: 512,
            cutoff_lead_months: 1,
            cutoff_date_field: CutoffDateField::ResolutionDate,
            embed_model: "Qwen/Qwen3-Embedding-8B".into(),
            embed_batch_size: 64,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidArgument("k must be >= 1".into()));
        }
        if self.chunk_tokens == 0 {
            return Err(RetrievalError::InvalidArgument("chunk_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Splits text into token byte ranges.
pub trait Tokenizer: Send + Sync {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;
}

/// Counts whitespace-delimited words as tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }
}

/// Splits `article.body` into consecutive chunks of `budget` tokens (the
/// last may be shorter). Chunk texts concatenate back to the body exactly:
/// each chunk runs from its first token to the next chunk's first token.
pub fn chunk_article(
    article: &Article,
    budget: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>, RetrievalError> {
    if budget == 0 {
        return Err(RetrievalError::InvalidArgument("chunk budget must be >= 1".into()));
    }
    let body = article.body.as_str();
    let spans = tokenizer.token_spans(body);
    if spans.is_empty() {
        return Ok(Vec::new());
    }
    let n_chunks = spans.len().div_ceil(budget);
    let chunks = (0..n_chunks)
        .map(|i| {
            let first = i * budget;
            let last = ((i + 1) * budget).min(spans.len());
            let start = if i == 0 { 0 } else { spans[first].start };
            let end = if last == spans.len() {
                body.len()
            } else {
                spans[last].start
            };
            Chunk {
                chunk_id: format!("{}#{i:05}", article.id),
                article_id: article.id.clone(),
                publish_date: article.publish_date,
                title: article.title.clone(),
                source: article.source.clone(),
                text: body[start..end].to_string(),
                token_count: last - first,
                embedding: None,
            }
        })
        .collect();
    Ok(chunks)
}

/// Latest publish date eligible for retrieval: one calendar month before
/// `resolution_date`, with the day clamped to the target month's length.
pub fn cutoff_from_resolution(resolution_date: NaiveDate) -> NaiveDate {
    cutoff_with_lead(resolution_date, 1)
}

pub fn cutoff_with_lead(resolution_date: NaiveDate, months: u32) -> NaiveDate {
    resolution_date
        .checked_sub_months(Months::new(months))
        .unwrap_or(NaiveDate::MIN)
}

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Chunk, RetrievalError};
use crate::gateway::Embedder;

pub const INDEX_MAGIC: [u8; 8] = *b"QFGINDEX";
pub const INDEX_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOptions {
    pub batch_size: usize,
    /// Maximum embedding requests in flight at once.
    pub max_in_flight: usize,
    /// JSONL file of already-embedded chunks. Reused on start, appended to
    /// as batches finish, kept when the build aborts and removed on success.
    pub checkpoint: Option<PathBuf>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_in_flight: 4,
            checkpoint: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    chunk_id: String,
    embedding: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    embed_model: String,
    dimension: usize,
    count: usize,
    chunks: Vec<Chunk>,
}

/// Immutable exact-cosine index over L2-normalized chunk embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    embed_model: String,
    dimension: usize,
    chunks: Vec<Chunk>,
    vectors: Vec<f32>,
}

/// A retrieval hit borrowed from the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredChunk<'a> {
    pub chunk: &'a Chunk,
    pub score: f64,
}

fn normalized(id: &str, v: &[f32]) -> Result<Vec<f32>, RetrievalError> {
    let degenerate = || RetrievalError::DegenerateEmbedding { id: id.to_string() };
    if v.iter().any(|x| !x.is_finite()) {
        return Err(degenerate());
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(degenerate());
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

impl Index {
    pub fn empty(embed_model: impl Into<String>) -> Self {
        Self {
            embed_model: embed_model.into(),
            dimension: 0,
            chunks: Vec::new(),
            vectors: Vec::new(),
        }
    }

    /// Assembles an index from chunks that already carry embeddings.
    pub fn from_embedded(embed_model: impl Into<String>, chunks: Vec<Chunk>) -> Result<Self, RetrievalError> {
        let mut index = Self::empty(embed_model);
        for mut chunk in chunks {
            let raw = chunk
                .embedding
                .take()
                .ok_or_else(|| RetrievalError::Format(format!("{} has no embedding", chunk.chunk_id)))?;
            index.push(chunk, &raw)?;
        }
        Ok(index)
    }

    fn push(&mut self, chunk: Chunk, raw: &[f32]) -> Result<(), RetrievalError> {
        if self.chunks.is_empty() {
            self.dimension = raw.len();
        } else if raw.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                id: chunk.chunk_id,
                expected: self.dimension,
                got: raw.len(),
            });
        }
        self.vectors.extend(normalized(&chunk.chunk_id, raw)?);
        self.chunks.push(chunk);
        Ok(())
    }

    /// Embeds every chunk and builds the index. Chunks are stored without
    /// their `embedding` field; vectors live in the index's own storage.
    pub fn build(chunks: Vec<Chunk>, embedder: &dyn Embedder, options: &BuildOptions) -> Result<Self, RetrievalError> {
        if let Some(empty) = chunks.iter().find(|c| c.text.trim().is_empty()) {
            return Err(RetrievalError::EmptyChunk(empty.chunk_id.clone()));
        }
        let total = chunks.len();
        let mut done: HashMap<String, Vec<f32>> = match &options.checkpoint {
            Some(path) => read_checkpoint(path)?,
            None => HashMap::new(),
        };
        let pending: Vec<&Chunk> = chunks.iter().filter(|c| !done.contains_key(&c.chunk_id)).collect();
        let batches: Vec<&[&Chunk]> = pending.chunks(options.batch_size.max(1)).collect();

        let mut checkpoint = match &options.checkpoint {
            Some(path) => Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?)),
            None => None,
        };

        for wave in batches.chunks(options.max_in_flight.max(1)) {
            let results: Vec<_> = wave
                .par_iter()
                .map(|batch| {
                    let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
                    embedder.embed(&texts)
                })
                .collect();
            let mut failure = None;
            for (batch, result) in wave.iter().zip(results) {
                match result {
                    Ok(vectors) => {
                        for (chunk, v) in batch.iter().zip(vectors) {
                            if let Some(w) = checkpoint.as_mut() {
                                serde_json::to_writer(
                                    &mut *w,
                                    &CheckpointLine {
                                        chunk_id: chunk.chunk_id.clone(),
                                        embedding: v.clone(),
                                    },
                                )
                                .map_err(std::io::Error::other)?;
                                w.write_all(b"\n")?;
                            }
                            done.insert(chunk.chunk_id.clone(), v);
                        }
                    }
                    Err(e) if failure.is_none() => failure = Some(e),
                    Err(_) => {}
                }
            }
            if let Some(w) = checkpoint.as_mut() {
                w.flush()?;
            }
            if let Some(source) = failure {
                return Err(RetrievalError::Embedding {
                    completed: chunks.iter().filter(|c| done.contains_key(&c.chunk_id)).count(),
                    total,
                    source,
                });
            }
        }

        let mut index = Self::empty(embedder.model_id());
        for mut chunk in chunks {
            let v = done
                .remove(&chunk.chunk_id)
                .expect("every chunk embedded or build aborted");
            chunk.embedding = None;
            index.push(chunk, &v)?;
        }
        if let Some(path) = &options.checkpoint {
            drop(checkpoint);
            let _ = fs::remove_file(path);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed_model(&self) -> &str {
        &self.embed_model
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    /// Unit-norm stored vector for chunk `i`.
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Top-`k` chunks published on or before `cutoff` by cosine similarity
    /// to the embedded `question`.
    pub fn query(
        &self,
        question: &str,
        cutoff: NaiveDate,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<ScoredChunk<'_>>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidArgument("k must be >= 1".into()));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let mut v = embedder
            .embed(&[question.to_string()])
            .map_err(RetrievalError::QueryEmbedding)?;
        let v = v.pop().ok_or_else(|| {
            RetrievalError::QueryEmbedding(crate::gateway::GatewayError::Other(
                "embedder returned no vector".into(),
            ))
        })?;
        self.query_vector(&v, cutoff, k)
    }

    /// Same as [`Index::query`] with a precomputed query vector. Results are
    /// ordered by descending score, then publish date descending, then
    /// chunk id ascending.
    pub fn query_vector(
        &self,
        query: &[f32],
        cutoff: NaiveDate,
        k: usize,
    ) -> Result<Vec<ScoredChunk<'_>>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidArgument("k must be >= 1".into()));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                id: "<query>".into(),
                expected: self.dimension,
                got: query.len(),
            });
        }
        let q = normalized("<query>", query)?;
        let mut hits: Vec<(usize, f64)> = (0..self.chunks.len())
            .into_par_iter()
            .filter(|&i| self.chunks[i].publish_date <= cutoff)
            .map(|i| {
                let dot: f64 = self
                    .vector(i)
                    .iter()
                    .zip(&q)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                (i, dot.clamp(-1.0, 1.0))
            })
            .collect();

        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            let (ca, cb) = (&self.chunks[a.0], &self.chunks[b.0]);
            b.1.total_cmp(&a.1)
                .then_with(|| cb.publish_date.cmp(&ca.publish_date))
                .then_with(|| ca.chunk_id.cmp(&cb.chunk_id))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_by(order);
        Ok(hits
            .into_iter()
            .map(|(i, score)| ScoredChunk {
                chunk: &self.chunks[i],
                score,
            })
            .collect())
    }

    /// Writes the binary vector file at `path` and the metadata sidecar at
    /// [`Index::sidecar_path`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&INDEX_MAGIC)?;
        out.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.dimension as u32).to_le_bytes())?;
        out.write_all(&(self.chunks.len() as u64).to_le_bytes())?;
        for x in &self.vectors {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()?;

        let sidecar = Sidecar {
            format_version: INDEX_FORMAT_VERSION,
            embed_model: self.embed_model.clone(),
            dimension: self.dimension,
            count: self.chunks.len(),
            chunks: self.chunks.clone(),
        };
        let meta = BufWriter::new(File::create(Self::sidecar_path(path))?);
        serde_json::to_writer_pretty(meta, &sidecar).map_err(std::io::Error::other)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN || bytes[..8] != INDEX_MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != INDEX_FORMAT_VERSION {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let dimension = u32_at(12) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let expected_len = dimension
            .checked_mul(count)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| RetrievalError::Format("header overflow".into()))?;
        if bytes.len() != expected_len {
            return Err(RetrievalError::Format(format!(
                "expected {expected_len} bytes, found {}",
                bytes.len()
            )));
        }
        let vectors: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();

        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(Self::sidecar_path(path))?))
            .map_err(|e| RetrievalError::Format(format!("sidecar: {e}")))?;
        if sidecar.format_version != version
            || sidecar.dimension != dimension
            || sidecar.count != count
            || sidecar.chunks.len() != count
        {
            return Err(RetrievalError::Format("sidecar disagrees with binary header".into()));
        }
        Ok(Self {
            embed_model: sidecar.embed_model,
            dimension,
            chunks: sidecar.chunks,
            vectors,
        })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        path.with_file_name(name)
    }
}

fn read_checkpoint(path: &Path) -> Result<HashMap<String, Vec<f32>>, RetrievalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted write is ignored.
        if let Ok(entry) = serde_json::from_str::<CheckpointLine>(&line) {
            out.insert(entry.chunk_id, entry.embedding);
        }
    }
    Ok(out)
}

//! RL rewards, group-relative advantages and training-batch export.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qgen::QuestionKind;
use crate::scoring::{self, Prediction, ScoringError};

pub const TRAINING_BATCH_SCHEMA: &str = "qforge.training-batch";
pub const TRAINING_BATCH_VERSION: u32 = 1;
/// Upper bound on retrieved chunks attached to a training prompt.
pub const MAX_TRAINING_CHUNKS: usize = 5;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("unknown reward mode {0:?} (expected accuracy, brier or accuracy_plus_brier)")]
    UnknownMode(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("training batch line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Accuracy,
    Brier,
    #[default]
    AccuracyPlusBrier,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Accuracy => "accuracy",
            RewardMode::Brier => "brier",
            RewardMode::AccuracyPlusBrier => "accuracy_plus_brier",
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardMode {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "accuracy" => Ok(RewardMode::Accuracy),
            "brier" => Ok(RewardMode::Brier),
            "accuracy_plus_brier" => Ok(RewardMode::AccuracyPlusBrier),
            other => Err(RewardError::UnknownMode(other.to_string())),
        }
    }
}

/// Brier terms are snapped to multiples of 2^-52 so that adding and then
/// subtracting the accuracy indicator is exact in binary floating point.
const BRIER_QUANTUM: f64 = 4_503_599_627_370_496.0; // 2^52

fn quantize(x: f64) -> f64 {
    (x * BRIER_QUANTUM).round() / BRIER_QUANTUM
}

/// Reward for one completion. For binary samples the Brier term is the
/// binary Brier score of the stated answer.
pub fn reward(
    prediction: &Prediction,
    correct: bool,
    mode: RewardMode,
    kind: QuestionKind,
) -> Result<f64, RewardError> {
    let indicator = if correct { 1.0 } else { 0.0 };
    let brier = || -> Result<f64, ScoringError> {
        match kind {
            QuestionKind::Freeform => scoring::freeform_brier(prediction.probability, correct),
            // Correct means the stated Yes/No matched the outcome, so the
            // stated probability is the probability placed on the outcome.
            QuestionKind::Binary => {
                let q = prediction.probability;
                scoring::binary_brier(if correct { q } else { 1.0 - q }, true)
            }
        }
    };
    Ok(match mode {
        RewardMode::Accuracy => indicator,
        RewardMode::Brier => quantize(brier()?),
        RewardMode::AccuracyPlusBrier => indicator + quantize(brier()?),
    })
}

/// Mode used during mixed training: free-form samples use `freeform_mode`,
/// binary samples always use the Brier reward alone.
pub fn training_mode(kind: QuestionKind, freeform_mode: RewardMode) -> RewardMode {
    match kind {
        QuestionKind::Freeform => freeform_mode,
        QuestionKind::Binary => RewardMode::Brier,
    }
}

/// Group-relative advantages: each reward minus the group mean.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::InvalidArgument("advantages of an empty group".into()));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(RewardError::InvalidArgument(format!("non-finite reward {bad}")));
    }
    // Identical rewards carry no signal; the rounded mean need not equal them.
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub prediction: Prediction,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    pub sample_id: String,
    pub mode: RewardMode,
    pub group_size: usize,
    pub completions: Vec<Completion>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RewardGroup {
    /// Scores `completions` under `mode`. The group size is the number of
    /// completions and must equal `expected_k`.
    pub fn new(
        sample_id: impl Into<String>,
        completions: Vec<Completion>,
        mode: RewardMode,
        kind: QuestionKind,
        expected_k: usize,
    ) -> Result<Self, RewardError> {
        if completions.len() != expected_k {
            return Err(RewardError::InvalidArgument(format!(
                "group has {} completions, expected K = {expected_k}",
                completions.len()
            )));
        }
        let rewards = completions
            .iter()
            .map(|c| reward(&c.prediction, c.correct, mode, kind))
            .collect::<Result<Vec<_>, _>>()?;
        let advantages = grpo_advantages(&rewards)?;
        Ok(Self {
            sample_id: sample_id.into(),
            mode,
            group_size: expected_k,
            completions,
            rewards,
            advantages,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchHeader {
    schema: String,
    version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub group: RewardGroup,
}

/// Writes a JSONL training batch: a schema header line, then one line per
/// group pairing its prompt with completions, rewards and advantages.
pub fn emit_training_batch<W: Write>(
    mut out: W,
    groups: &[RewardGroup],
    prompts: &[String],
) -> Result<(), RewardError> {
    if groups.len() != prompts.len() {
        return Err(RewardError::InvalidArgument(format!(
            "{} groups but {} prompts",
            groups.len(),
            prompts.len()
        )));
    }
    let header = BatchHeader {
        schema: TRAINING_BATCH_SCHEMA.into(),
        version: TRAINING_BATCH_VERSION,
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::other)?;
    out.write_all(b"\n")?;
    for (group, prompt) in groups.iter().zip(prompts) {
        let record = TrainingRecord {
            prompt: prompt.clone(),
            group: group.clone(),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_training_batch<R: BufRead>(input: R) -> Result<Vec<TrainingRecord>, RewardError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(RewardError::Format {
        line: 1,
        detail: "missing header".into(),
    })?;
    let header: BatchHeader = serde_json::from_str(&first?).map_err(|e| RewardError::Format {
        line: 1,
        detail: e.to_string(),
    })?;
    if header.schema != TRAINING_BATCH_SCHEMA || header.version != TRAINING_BATCH_VERSION {
        return Err(RewardError::Format {
            line: 1,
            detail: format!("unsupported schema {} v{}", header.schema, header.version),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RewardError::Format {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Seeded source of per-prompt chunk counts and batch shuffles.
#[derive(Debug, Clone)]
pub struct TrainingSampler {
    rng: ChaCha8Rng,
}

impl TrainingSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw from `0..=MAX_TRAINING_CHUNKS`.
    pub fn chunk_count(&mut self) -> usize {
        self.rng.random_range(0..=MAX_TRAINING_CHUNKS)
    }

    /// Interleaves free-form and binary items with one global shuffle.
    pub fn mix<T>(&mut self, freeform: Vec<T>, binary: Vec<T>) -> Vec<T> {
        let mut all: Vec<T> = freeform.into_iter().chain(binary).collect();
        all.shuffle(&mut self.rng);
        all
    }
}

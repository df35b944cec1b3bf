//! Forecasting-question synthesis and evaluation toolkit.
//!
//! The crate turns a dated news corpus into open-ended forecasting questions,
//! serves retrieval context that never reaches past a temporal cutoff, scores
//! free-form probabilistic predictions, and computes group-relative RL rewards.
//! Every language-model role sits behind the [`gateway`] traits so the whole
//! pipeline can run against cached or mocked clients.

pub mod config;
pub mod corpus;
pub mod gateway;
pub mod harness;
pub mod qgen;
pub mod retrieval;
pub mod reward;
pub mod scoring;
pub mod templates;
pub mod text;

pub use config::Config;
pub use corpus::{Article, FieldMapping};
pub use gateway::parse::{ParsedPrediction, RawSample};
pub use gateway::{CompletionClient, Embedder, GatewayError, ModelRole, Role};
pub use harness::{EvalConfig, EvalReport, PredictionRecord};
pub use qgen::{ForecastSample, QuestionKind, ResolutionCriteria, StageReport};
pub use retrieval::{Chunk, Index, RetrievalConfig};
pub use reward::{RewardGroup, RewardMode};
pub use scoring::{GradedPrediction, Prediction};

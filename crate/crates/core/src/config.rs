//! TOML configuration shared by the CLI and library callers.
//!
//! Credentials never appear here: role bindings reject unknown keys, and API
//! keys are read from `QFORGE_<ROLE>_API_KEY` at client construction time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FieldMapping;
use crate::gateway::{ModelRole, RetryPolicy, Role, SamplingParams};
use crate::harness::EvalConfig;
use crate::qgen::QgenConfig;
use crate::retrieval::RetrievalConfig;
use crate::reward::RewardMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("role {0} is not bound in [roles]")]
    MissingRole(Role),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    pub model: String,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Raw article JSONL consumed by `ingest`.
    pub raw_articles: PathBuf,
    /// Normalized, deduplicated articles.
    pub articles: PathBuf,
    pub index: PathBuf,
    pub samples: PathBuf,
    pub stage_report: PathBuf,
    /// Binary (yes/no) questions mixed into training batches.
    pub binary_samples: Option<PathBuf>,
    pub predictions: PathBuf,
    pub report: PathBuf,
    pub training_batch: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            raw_articles: "data/raw_articles.jsonl".into(),
            articles: "data/articles.jsonl".into(),
            index: "data/index.bin".into(),
            samples: "data/samples.jsonl".into(),
            stage_report: "data/stage_report.json".into(),
            binary_samples: None,
            predictions: "data/predictions.jsonl".into(),
            report: "data/report.json".into(),
            training_batch: "data/training_batch.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub language: String,
    pub fields: FieldMapping,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            window_start: NaiveDate::from_ymd_opt(2023, 6, 1).expect("valid date"),
            window_end: NaiveDate::from_ymd_opt(2025, 4, 30).expect("valid date"),
            language: "en".into(),
            fields: FieldMapping::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub cache_dir: PathBuf,
    pub replay_only: bool,
    pub timeout_secs: u64,
    pub requests_per_second: f64,
    pub burst: u32,
    pub retry: RetryPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            cache_dir: ".qforge-cache".into(),
            replay_only: false,
            timeout_secs: 120,
            requests_per_second: 4.0,
            burst: 8,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    /// Completions per group (K). Required for `reward`.
    pub group_size: Option<usize>,
    pub seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: RewardMode::AccuracyPlusBrier,
            group_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub retrieval: RetrievalConfig,
    pub qgen: QgenConfig,
    pub eval: EvalConfig,
    pub reward: RewardConfig,
    pub gateway: GatewayConfig,
    pub roles: BTreeMap<Role, RoleConfig>,
}

/// Commented starting configuration, kept in sync with [`Config`] by tests.
pub const EXAMPLE_CONFIG: &str = include_str!("../../../qforge.example.toml");

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            source: Box::new(e),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.qgen.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.corpus.window_start > self.corpus.window_end {
            return Err(ConfigError::Invalid(
                "corpus.window_start is after corpus.window_end".into(),
            ));
        }
        if self.eval.attempts_per_sample == 0 {
            return Err(ConfigError::Invalid("eval.attempts_per_sample must be >= 1".into()));
        }
        if self.reward.group_size == Some(0) {
            return Err(ConfigError::Invalid("reward.group_size must be >= 1".into()));
        }
        Ok(())
    }

    /// The binding for `role`, with any `QFORGE_<ROLE>_BASE_URL` override.
    pub fn binding(&self, role: Role) -> Result<ModelRole, ConfigError> {
        let rc = self.roles.get(&role).ok_or(ConfigError::MissingRole(role))?;
        Ok(ModelRole {
            role,
            model: rc.model.clone(),
            endpoint: rc.endpoint.clone(),
            params: SamplingParams {
                temperature: rc.temperature,
                max_tokens: rc.max_tokens,
            },
        }
        .with_env_overrides())
    }
}

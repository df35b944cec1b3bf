//! Question synthesis: generation, validation, best-question selection,
//! leakage editing and the post-hoc filters, with per-stage attrition
//! accounting.

mod criteria;
mod pipeline;
mod stages;

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Article;
use crate::gateway::parse::RawSample;
use crate::text::{leak_normal_form, word_count};

pub use criteria::{extract_date, parse_criteria, CriteriaFields};
pub use pipeline::{apply_filters, render_attrition_table, run_pipeline, Counters, PipelineClients, PipelineOutput};
pub use stages::{fix_leakage, generate_samples, render_article, select_best, validate_sample};

#[derive(Debug, Error)]
pub enum QgenError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("template: {0}")]
    Template(#[from] crate::templates::TemplateError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    #[default]
    Freeform,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionCriteria {
    /// Criteria exactly as generated; authoritative for prompts and leak checks.
    pub text: String,
    pub source_of_truth: String,
    pub resolution_date: NaiveDate,
    pub answer_format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub sample_id: String,
    pub question_title: String,
    pub background: String,
    pub resolution_criteria: ResolutionCriteria,
    pub answer: String,
    pub answer_type: String,
    pub source_article_id: String,
    pub source_url: String,
    pub question_kind: QuestionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_publish_date: Option<NaiveDate>,
}

impl ForecastSample {
    /// Builds a sample from a parsed block, finalizing the resolution date
    /// against the article. Returns whether the date fell back to the
    /// publish date.
    pub fn from_raw(raw: &RawSample, article: &Article, sample_id: String) -> (Self, bool) {
        let fields = parse_criteria(&raw.resolution_criteria);
        let (resolution_date, fell_back) = finalize_resolution_date(
            fields.resolution_date_text.as_deref(),
            &raw.resolution_criteria,
            article.publish_date,
        );
        let sample = Self {
            sample_id,
            question_title: raw.question_title.clone(),
            background: raw.background.clone(),
            resolution_criteria: ResolutionCriteria {
                text: raw.resolution_criteria.clone(),
                source_of_truth: fields.source_of_truth,
                resolution_date,
                answer_format: fields.answer_format,
            },
            answer: raw.answer.clone(),
            answer_type: raw.answer_type.clone(),
            source_article_id: article.id.clone(),
            source_url: article.url.clone(),
            question_kind: QuestionKind::Freeform,
            source_publish_date: Some(article.publish_date),
        };
        (sample, fell_back)
    }

    /// A resolved yes/no question entering without generation.
    pub fn binary(
        sample_id: impl Into<String>,
        question_title: impl Into<String>,
        background: impl Into<String>,
        criteria_text: impl Into<String>,
        resolution_date: NaiveDate,
        resolved_yes: bool,
    ) -> Self {
        let text = criteria_text.into();
        Self {
            sample_id: sample_id.into(),
            question_title: question_title.into(),
            background: background.into(),
            resolution_criteria: ResolutionCriteria {
                source_of_truth: text.clone(),
                text,
                resolution_date,
                answer_format: "Yes or No".into(),
            },
            answer: if resolved_yes { "Yes" } else { "No" }.into(),
            answer_type: "string (binary)".into(),
            source_article_id: String::new(),
            source_url: String::new(),
            question_kind: QuestionKind::Binary,
            source_publish_date: None,
        }
    }

    pub fn to_raw(&self) -> RawSample {
        RawSample {
            question_id: None,
            question_title: self.question_title.clone(),
            background: self.background.clone(),
            resolution_criteria: self.resolution_criteria.text.clone(),
            answer: self.answer.clone(),
            answer_type: self.answer_type.clone(),
        }
    }
}

/// `min(proposed, publish_date)`; the publish date when no date can be read
/// from the proposal. `item_text` is the resolution-date item if one was
/// found, `criteria_text` the whole criteria (searched second).
pub fn finalize_resolution_date(
    item_text: Option<&str>,
    criteria_text: &str,
    publish_date: NaiveDate,
) -> (NaiveDate, bool) {
    let proposed = item_text.and_then(extract_date).or_else(|| extract_date(criteria_text));
    match proposed {
        Some(d) => (d.min(publish_date), false),
        None => (publish_date, true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakMode {
    /// The whole normalized answer appears in a field.
    #[default]
    ExactAnswer,
    /// Additionally, any answer token of four or more characters appears.
    AnswerTokens,
}

const MIN_LEAK_TOKEN_CHARS: usize = 4;

/// True (keep) when no question field contains the answer.
pub fn string_leak_filter(sample: &ForecastSample, mode: LeakMode) -> bool {
    let answer = leak_normal_form(&sample.answer);
    if answer.is_empty() {
        return true;
    }
    let fields = [
        leak_normal_form(&sample.question_title),
        leak_normal_form(&sample.background),
        leak_normal_form(&sample.resolution_criteria.text),
    ];
    let mut needles = vec![answer.clone()];
    if mode == LeakMode::AnswerTokens {
        needles.extend(
            answer
                .split_whitespace()
                .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
                .filter(|t| t.chars().count() >= MIN_LEAK_TOKEN_CHARS)
                .map(str::to_string),
        );
    }
    !fields.iter().any(|f| needles.iter().any(|n| f.contains(n.as_str())))
}

/// True when the answer type begins with "string", ignoring case.
pub fn answer_type_filter(sample: &ForecastSample) -> bool {
    sample
        .answer_type
        .trim_start()
        .get(..6)
        .is_some_and(|p| p.eq_ignore_ascii_case("string"))
}

/// True when the sample resolves strictly after `threshold`.
pub fn resolution_cutoff_filter(sample: &ForecastSample, threshold: NaiveDate) -> bool {
    sample.resolution_criteria.resolution_date > threshold
}

pub fn answer_within_word_limit(answer: &str, max_words: usize) -> bool {
    let n = word_count(answer);
    n >= 1 && n <= max_words
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    QuestionGeneration,
    Validation,
    BestSelection,
    LeakageEdit,
    StringLeakFilter,
    AnswerTypeFilter,
    ResolutionCutoff,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::QuestionGeneration,
        Stage::Validation,
        Stage::BestSelection,
        Stage::LeakageEdit,
        Stage::StringLeakFilter,
        Stage::AnswerTypeFilter,
        Stage::ResolutionCutoff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::QuestionGeneration => "question_generation",
            Stage::Validation => "validation",
            Stage::BestSelection => "best_selection",
            Stage::LeakageEdit => "leakage_edit",
            Stage::StringLeakFilter => "string_leak_filter",
            Stage::AnswerTypeFilter => "answer_type_filter",
            Stage::ResolutionCutoff => "resolution_cutoff",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage_name: String,
    pub input_count: u64,
    pub output_count: u64,
}

impl StageReport {
    pub fn new(stage: Stage, input_count: u64, output_count: u64) -> Self {
        Self {
            stage_name: stage.as_str().into(),
            input_count,
            output_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QgenConfig {
    pub num_questions: usize,
    pub max_answer_words: usize,
    pub leak_mode: LeakMode,
    /// Samples must resolve strictly after this date.
    pub resolve_after: NaiveDate,
    /// Articles processed concurrently.
    pub max_in_flight: usize,
}

impl Default for QgenConfig {
    fn default() -> Self {
        Self {
            num_questions: 3,
            max_answer_words: 3,
            leak_mode: LeakMode::ExactAnswer,
            resolve_after: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            max_in_flight: 8,
        }
    }
}

impl QgenConfig {
    pub fn validate(&self) -> Result<(), QgenError> {
        if self.num_questions == 0 {
            return Err(QgenError::InvalidArgument("num_questions must be >= 1".into()));
        }
        if self.max_answer_words == 0 {
            return Err(QgenError::InvalidArgument("max_answer_words must be >= 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(QgenError::InvalidArgument("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

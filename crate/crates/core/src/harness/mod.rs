//! Evaluation: prompt construction, forecaster runs, grading, aggregation
//! and report rendering.

mod prompt;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::gateway::parse::parse_prediction;
use crate::gateway::{CompletionClient, Embedder, GatewayError};
use crate::qgen::{ForecastSample, QuestionKind};
use crate::retrieval::{cutoff_with_lead, Chunk, Index, RetrievalError};
use crate::scoring::{self, CalibrationBin, Prediction, ScoringError};

pub use prompt::{build_prompt, render_passages};
pub use report::{render_report, render_scatter_csv, RenderedFile, ReportFormat};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("sample {sample_id} attempt {attempt}: {detail}")]
    Strict {
        sample_id: String,
        attempt: u32,
        detail: String,
    },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("template: {0}")]
    Template(#[from] crate::templates::TemplateError),
    #[error("prediction log line {line}: {detail}")]
    Log { line: usize, detail: String },
    #[error("worker pool: {0}")]
    Pool(String),
    /// A replay-only run needed a response that was never recorded. Fatal:
    /// the recording does not match the run's prompts, models or params.
    #[error(transparent)]
    ReplayMiss(GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub dataset_id: String,
    pub k: usize,
    pub attempts_per_sample: u32,
    pub with_retrieval: bool,
    /// Months between resolution date and retrieval cutoff.
    pub cutoff_lead_months: u32,
    /// Fail the whole run on the first parse or transport failure.
    pub strict: bool,
    pub calibration_bins: usize,
    pub max_in_flight: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dataset_id: "dataset".into(),
            k: 5,
            attempts_per_sample: 1,
            with_retrieval: false,
            cutoff_lead_months: 1,
            strict: false,
            calibration_bins: scoring::DEFAULT_CALIBRATION_BINS,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    RetrievalError,
    TransportError,
    ParseError,
    GradeError,
}

/// One line of the per-prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub attempt: u32,
    pub question_kind: QuestionKind,
    pub resolution_date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<NaiveDate>,
    #[serde(default)]
    pub retrieved_chunk_ids: Vec<String>,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeform_brier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_brier: Option<f64>,
    pub grader_id: String,
}

impl PredictionRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyRow {
    /// Resolution month, `YYYY-MM`.
    pub month: String,
    pub n: usize,
    pub accuracy: f64,
    pub brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub forecaster: String,
    pub grader: String,
    /// Samples with at least one successful prediction.
    pub n_samples: usize,
    pub attempts_per_sample: u32,
    pub with_retrieval: bool,
    pub retrieval_k: usize,
    /// avg@N over `n_samples`.
    pub accuracy: f64,
    /// Mean free-form Brier score over successful predictions.
    pub mean_freeform_brier: f64,
    /// Mean binary Brier score over successful binary-kind predictions.
    pub mean_binary_brier: Option<f64>,
    pub calibration: Vec<CalibrationBin>,
    pub monthly: Vec<MonthlyRow>,
    /// Predictions excluded from every mean.
    pub failed_predictions: usize,
    /// Samples excluded because none of their attempts succeeded.
    pub failed_samples: usize,
}

/// Everything needed for retrieval during evaluation.
#[derive(Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub index: &'a Index,
    pub embedder: &'a dyn Embedder,
}

pub struct EvalRun {
    pub report: EvalReport,
    pub records: Vec<PredictionRecord>,
}

fn failure(
    sample: &ForecastSample,
    attempt: u32,
    cutoff: Option<NaiveDate>,
    chunk_ids: &[String],
    status: RecordStatus,
    error: String,
    grader_id: &str,
) -> PredictionRecord {
    PredictionRecord {
        sample_id: sample.sample_id.clone(),
        attempt,
        question_kind: sample.question_kind,
        resolution_date: sample.resolution_criteria.resolution_date,
        cutoff,
        retrieved_chunk_ids: chunk_ids.to_vec(),
        status,
        error: Some(error),
        prediction: None,
        correct: None,
        freeform_brier: None,
        binary_brier: None,
        grader_id: grader_id.to_string(),
    }
}

fn evaluate_sample(
    sample: &ForecastSample,
    forecaster: &dyn CompletionClient,
    grader: &dyn CompletionClient,
    retrieval: Option<RetrievalContext<'_>>,
    config: &EvalConfig,
) -> Result<Vec<PredictionRecord>, HarnessError> {
    let grader_id = grader.model_id();
    let attempts = 0..config.attempts_per_sample;
    let (cutoff, chunks): (Option<NaiveDate>, Vec<Chunk>) = match (config.with_retrieval, retrieval) {
        (true, Some(ctx)) => {
            let cutoff = cutoff_with_lead(sample.resolution_criteria.resolution_date, config.cutoff_lead_months);
            match ctx.index.query(&sample.question_title, cutoff, config.k, ctx.embedder) {
                Ok(hits) => {
                    debug_assert!(hits.iter().all(|h| h.chunk.publish_date <= cutoff));
                    (Some(cutoff), hits.into_iter().map(|h| h.chunk.clone()).collect())
                }
                Err(RetrievalError::QueryEmbedding(e @ GatewayError::ReplayMiss { .. })) => {
                    return Err(HarnessError::ReplayMiss(e))
                }
                Err(e) => {
                    return Ok(attempts
                        .map(|a| {
                            failure(
                                sample,
                                a,
                                Some(cutoff),
                                &[],
                                RecordStatus::RetrievalError,
                                e.to_string(),
                                grader_id,
                            )
                        })
                        .collect())
                }
            }
        }
        (true, None) => {
            return Err(HarnessError::InvalidArgument(
                "retrieval requested without an index".into(),
            ))
        }
        (false, _) => (None, Vec::new()),
    };
    let chunk_ids: Vec<String> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
    let prompt = build_prompt(sample, &chunks, config.with_retrieval)?;
    let binary = sample.question_kind == QuestionKind::Binary;

    let mut out = Vec::with_capacity(config.attempts_per_sample as usize);
    for attempt in attempts {
        let fail = |status, error: String| failure(sample, attempt, cutoff, &chunk_ids, status, error, grader_id);
        let raw = match forecaster.complete_attempt(&prompt, attempt) {
            Ok(r) => r,
            Err(e @ GatewayError::ReplayMiss { .. }) => return Err(HarnessError::ReplayMiss(e)),
            Err(e) => {
                out.push(fail(RecordStatus::TransportError, e.to_string()));
                continue;
            }
        };
        let parsed = match parse_prediction(&raw) {
            Ok(p) => p,
            Err(e) => {
                out.push(fail(RecordStatus::ParseError, e.to_string()));
                continue;
            }
        };
        let prediction = Prediction {
            sample_id: sample.sample_id.clone(),
            answer: parsed.answer,
            probability: parsed.probability,
            probability_clamped: parsed.probability_clamped,
            raw_response: raw,
        };
        let kept = prediction.clone();
        match scoring::grade(prediction, Some(&sample.question_title), &sample.answer, binary, grader) {
            Ok(g) => out.push(PredictionRecord {
                sample_id: sample.sample_id.clone(),
                attempt,
                question_kind: sample.question_kind,
                resolution_date: sample.resolution_criteria.resolution_date,
                cutoff,
                retrieved_chunk_ids: chunk_ids.clone(),
                status: RecordStatus::Ok,
                error: None,
                correct: Some(g.correct),
                freeform_brier: Some(g.freeform_brier),
                binary_brier: g.binary_brier,
                prediction: Some(g.prediction),
                grader_id: g.grader_id,
            }),
            Err(ScoringError::Grader(e @ GatewayError::ReplayMiss { .. })) => return Err(HarnessError::ReplayMiss(e)),
            Err(e) => out.push(PredictionRecord {
                prediction: Some(kept),
                ..fail(RecordStatus::GradeError, e.to_string())
            }),
        }
    }
    Ok(out)
}

/// Grades `record` again with `grader`. Records without a parsed prediction
/// (transport, retrieval or parse failures) are returned unchanged. Only a
/// replay miss is an error; other grading failures become `GradeError`.
pub fn regrade_record(
    record: &PredictionRecord,
    sample: &ForecastSample,
    grader: &dyn CompletionClient,
) -> Result<PredictionRecord, HarnessError> {
    let Some(prediction) = record.prediction.clone() else {
        return Ok(record.clone());
    };
    let binary = sample.question_kind == QuestionKind::Binary;
    Ok(
        match scoring::grade(
            prediction.clone(),
            Some(&sample.question_title),
            &sample.answer,
            binary,
            grader,
        ) {
            Ok(g) => PredictionRecord {
                status: RecordStatus::Ok,
                error: None,
                correct: Some(g.correct),
                freeform_brier: Some(g.freeform_brier),
                binary_brier: g.binary_brier,
                prediction: Some(g.prediction),
                grader_id: g.grader_id,
                ..record.clone()
            },
            Err(ScoringError::Grader(e @ GatewayError::ReplayMiss { .. })) => return Err(HarnessError::ReplayMiss(e)),
            Err(e) => PredictionRecord {
                status: RecordStatus::GradeError,
                error: Some(e.to_string()),
                correct: None,
                freeform_brier: None,
                binary_brier: None,
                prediction: Some(prediction),
                grader_id: grader.model_id().to_string(),
                ..record.clone()
            },
        },
    )
}

/// Re-grades every record against `dataset`, preserving record order.
pub fn regrade(
    records: &[PredictionRecord],
    dataset: &[ForecastSample],
    grader: &dyn CompletionClient,
    max_in_flight: usize,
) -> Result<Vec<PredictionRecord>, HarnessError> {
    let by_id: HashMap<&str, &ForecastSample> = dataset.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let sample = by_id
                    .get(r.sample_id.as_str())
                    .ok_or_else(|| HarnessError::InvalidArgument(format!("no sample {} in dataset", r.sample_id)))?;
                regrade_record(r, sample, grader)
            })
            .collect()
    })
}

/// Runs the forecaster over `dataset`, grades every attempt and aggregates
/// the results. Records come back in dataset order, attempts ascending.
pub fn evaluate(
    dataset: &[ForecastSample],
    forecaster: &dyn CompletionClient,
    grader: &dyn CompletionClient,
    retrieval: Option<RetrievalContext<'_>>,
    config: &EvalConfig,
) -> Result<EvalRun, HarnessError> {
    if config.attempts_per_sample == 0 {
        return Err(HarnessError::InvalidArgument("attempts_per_sample must be >= 1".into()));
    }
    if config.with_retrieval && config.k == 0 {
        return Err(HarnessError::InvalidArgument("k must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let per_sample: Vec<Vec<PredictionRecord>> = pool.install(|| {
        dataset
            .par_iter()
            .map(|s| evaluate_sample(s, forecaster, grader, retrieval, config))
            .collect::<Result<_, _>>()
    })?;
    let records: Vec<PredictionRecord> = per_sample.into_iter().flatten().collect();
    if let Some(bad) = records.iter().find(|r| !r.is_ok()) {
        if config.strict {
            return Err(HarnessError::Strict {
                sample_id: bad.sample_id.clone(),
                attempt: bad.attempt,
                detail: bad.error.clone().unwrap_or_default(),
            });
        }
        warn!(
            failed = records.iter().filter(|r| !r.is_ok()).count(),
            "predictions excluded from means"
        );
    }
    let meta = ReportMeta {
        dataset_id: config.dataset_id.clone(),
        forecaster: forecaster.model_id().to_string(),
        grader: grader.model_id().to_string(),
        attempts_per_sample: config.attempts_per_sample,
        with_retrieval: config.with_retrieval,
        retrieval_k: if config.with_retrieval { config.k } else { 0 },
        calibration_bins: config.calibration_bins,
    };
    let report = aggregate(&records, &meta)?;
    Ok(EvalRun { report, records })
}

/// Report fields not derivable from the records themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_id: String,
    pub forecaster: String,
    pub grader: String,
    pub attempts_per_sample: u32,
    pub with_retrieval: bool,
    pub retrieval_k: usize,
    pub calibration_bins: usize,
}

/// Computes every report aggregate from the per-prediction records.
pub fn aggregate(records: &[PredictionRecord], meta: &ReportMeta) -> Result<EvalReport, HarnessError> {
    // sample_id -> (resolution month, correctness list, brier list)
    let mut by_sample: BTreeMap<&str, (String, Vec<bool>, Vec<f64>)> = BTreeMap::new();
    let mut all_ids: BTreeMap<&str, ()> = BTreeMap::new();
    let mut points = Vec::new();
    let mut binary = Vec::new();
    let mut brier_sum = 0.0;
    let mut n_ok = 0usize;
    for r in records {
        all_ids.insert(&r.sample_id, ());
        if !r.is_ok() {
            continue;
        }
        let (Some(p), Some(correct), Some(brier)) = (&r.prediction, r.correct, r.freeform_brier) else {
            return Err(HarnessError::InvalidArgument(format!(
                "record for {} marked ok but incomplete",
                r.sample_id
            )));
        };
        let entry = by_sample
            .entry(&r.sample_id)
            .or_insert_with(|| (r.resolution_date.format("%Y-%m").to_string(), Vec::new(), Vec::new()));
        entry.1.push(correct);
        entry.2.push(brier);
        points.push((p.probability, correct));
        binary.extend(r.binary_brier);
        brier_sum += brier;
        n_ok += 1;
    }
    let failed_predictions = records.len() - n_ok;
    let failed_samples = all_ids.len() - by_sample.len();
    let per_sample: Vec<Vec<bool>> = by_sample.values().map(|v| v.1.clone()).collect();
    let accuracy = if per_sample.is_empty() {
        0.0
    } else {
        scoring::avg_at_n(&per_sample)?
    };

    let mut months: BTreeMap<&str, (Vec<Vec<bool>>, f64, usize)> = BTreeMap::new();
    for (month, correct, briers) in by_sample.values() {
        let m = months.entry(month.as_str()).or_default();
        m.0.push(correct.clone());
        m.1 += briers.iter().sum::<f64>();
        m.2 += briers.len();
    }
    let monthly = months
        .into_iter()
        .map(|(month, (samples, brier, n_pred))| {
            Ok(MonthlyRow {
                month: month.to_string(),
                n: samples.len(),
                accuracy: scoring::avg_at_n(&samples)?,
                brier: brier / n_pred as f64,
            })
        })
        .collect::<Result<Vec<_>, ScoringError>>()?;

    Ok(EvalReport {
        dataset_id: meta.dataset_id.clone(),
        forecaster: meta.forecaster.clone(),
        grader: meta.grader.clone(),
        n_samples: by_sample.len(),
        attempts_per_sample: meta.attempts_per_sample,
        with_retrieval: meta.with_retrieval,
        retrieval_k: meta.retrieval_k,
        accuracy,
        mean_freeform_brier: if n_ok == 0 { 0.0 } else { brier_sum / n_ok as f64 },
        mean_binary_brier: (!binary.is_empty()).then(|| binary.iter().sum::<f64>() / binary.len() as f64),
        calibration: scoring::calibration_curve(points, meta.calibration_bins)?,
        monthly,
        failed_predictions,
        failed_samples,
    })
}

/// Writes records as JSONL, one complete line per write.
pub fn write_records<W: Write>(mut out: W, records: &[PredictionRecord]) -> Result<(), HarnessError> {
    for r in records {
        let mut line = serde_json::to_vec(r).map_err(std::io::Error::other)?;
        line.push(b'\n');
        out.write_all(&line)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Log {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

//! Scoring rules, answer matching and calibration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::parse::{parse_verdict, ParseError};
use crate::gateway::{CompletionClient, GatewayError};
use crate::templates;
use crate::text::answer_normal_form;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("grader call failed: {0}")]
    Grader(#[from] GatewayError),
    #[error("grader verdict unparseable: {0}")]
    Verdict(#[from] ParseError),
    #[error("grader prompt: {0}")]
    Template(#[from] templates::TemplateError),
}

/// A forecaster's parsed output for one attempt at one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub answer: String,
    pub probability: f64,
    #[serde(default)]
    pub probability_clamped: bool,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedPrediction {
    pub prediction: Prediction,
    pub correct: bool,
    pub freeform_brier: f64,
    /// Present for binary-kind samples only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_brier: Option<f64>,
    pub grader_id: String,
}

fn check_probability(q: f64) -> Result<(), ScoringError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(ScoringError::ProbabilityOutOfRange(q))
    }
}

/// Shifted free-form Brier score: `1-(q-1)^2` when correct, `-q^2` otherwise.
pub fn freeform_brier(q: f64, correct: bool) -> Result<f64, ScoringError> {
    check_probability(q)?;
    Ok(if correct { 1.0 - (q - 1.0) * (q - 1.0) } else { -(q * q) })
}

/// Unshifted free-form Brier: the multi-class Brier score with all
/// unstated outcomes at probability zero. Equals `freeform_brier - 1`.
pub fn unshifted_brier(q: f64, correct: bool) -> Result<f64, ScoringError> {
    check_probability(q)?;
    Ok(if correct {
        -((1.0 - q) * (1.0 - q))
    } else {
        -1.0 - q * q
    })
}

/// Brier score of a YES probability against a binary outcome, in [-1, 0].
pub fn binary_brier(q: f64, outcome: bool) -> Result<f64, ScoringError> {
    check_probability(q)?;
    let o = if outcome { 1.0 } else { 0.0 };
    Ok(-((q - o) * (q - o)))
}

/// Decides whether `candidate` and `truth` name the same answer.
///
/// Answers equal after normalization match without contacting the grader.
/// Otherwise the grader is prompted and its 0/1 verdict returned; grader
/// failures and unparseable verdicts are errors.
pub fn match_answers(
    question: Option<&str>,
    candidate: &str,
    truth: &str,
    grader: &dyn CompletionClient,
) -> Result<bool, ScoringError> {
    if candidate.trim().is_empty() || truth.trim().is_empty() {
        return Err(ScoringError::InvalidArgument("answers must be non-empty".into()));
    }
    if answer_normal_form(candidate) == answer_normal_form(truth) {
        return Ok(true);
    }
    let prompt = templates::grader_match().render(&[
        ("question", question.unwrap_or("(not provided)")),
        ("response", candidate.trim()),
        ("reference", truth.trim()),
    ])?;
    let reply = grader.complete(&prompt)?;
    Ok(parse_verdict(&reply)?)
}

/// Fraction of candidates on which both graders return the same verdict.
pub fn grader_agreement(
    candidates: &[(&str, &str)],
    grader_a: &dyn CompletionClient,
    grader_b: &dyn CompletionClient,
) -> Result<f64, ScoringError> {
    if candidates.is_empty() {
        return Err(ScoringError::InvalidArgument("agreement over zero predictions".into()));
    }
    let mut agree = 0usize;
    for (candidate, truth) in candidates {
        let a = match_answers(None, candidate, truth, grader_a)?;
        let b = match_answers(None, candidate, truth, grader_b)?;
        agree += usize::from(a == b);
    }
    Ok(agree as f64 / candidates.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
    /// `None` when the bin is empty.
    pub mean_confidence: Option<f64>,
    /// `None` when the bin is empty.
    pub empirical_accuracy: Option<f64>,
}

pub const DEFAULT_CALIBRATION_BINS: usize = 10;

/// Bin index for probability `q` among `bins` equal-width bins on [0, 1];
/// bins are half-open except the last, which includes 1.
pub fn calibration_bin_index(q: f64, bins: usize) -> usize {
    let mut i = (q * bins as f64).floor() as usize;
    // Float error can put q slightly on the wrong side of a bin edge.
    if i > 0 && q < i as f64 / bins as f64 {
        i -= 1;
    } else if i + 1 < bins && q >= (i + 1) as f64 / bins as f64 {
        i += 1;
    }
    i.min(bins - 1)
}

/// Reliability curve over `(probability, correct)` pairs.
pub fn calibration_curve(
    points: impl IntoIterator<Item = (f64, bool)>,
    bins: usize,
) -> Result<Vec<CalibrationBin>, ScoringError> {
    if bins == 0 {
        return Err(ScoringError::InvalidArgument("bins must be >= 1".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0f64; bins];
    let mut hits = vec![0usize; bins];
    for (q, correct) in points {
        check_probability(q)?;
        let i = calibration_bin_index(q, bins);
        count[i] += 1;
        conf[i] += q;
        hits[i] += usize::from(correct);
    }
    Ok((0..bins)
        .map(|i| {
            let n = count[i];
            CalibrationBin {
                bin_low: i as f64 / bins as f64,
                bin_high: (i + 1) as f64 / bins as f64,
                count: n,
                mean_confidence: (n > 0).then(|| conf[i] / n as f64),
                empirical_accuracy: (n > 0).then(|| hits[i] as f64 / n as f64),
            }
        })
        .collect())
}

pub fn calibration_from_graded(graded: &[GradedPrediction], bins: usize) -> Result<Vec<CalibrationBin>, ScoringError> {
    calibration_curve(graded.iter().map(|g| (g.prediction.probability, g.correct)), bins)
}

/// Mean over samples of the per-sample fraction of correct attempts.
pub fn avg_at_n(per_sample: &[Vec<bool>]) -> Result<f64, ScoringError> {
    if per_sample.is_empty() {
        return Err(ScoringError::InvalidArgument("avg@N of zero samples".into()));
    }
    let mut total = 0.0;
    for attempts in per_sample {
        if attempts.is_empty() {
            return Err(ScoringError::InvalidArgument("sample with zero attempts".into()));
        }
        total += attempts.iter().filter(|&&c| c).count() as f64 / attempts.len() as f64;
    }
    Ok(total / per_sample.len() as f64)
}

/// Grades one prediction against the ground truth.
pub fn grade(
    prediction: Prediction,
    question: Option<&str>,
    truth: &str,
    binary: bool,
    grader: &dyn CompletionClient,
) -> Result<GradedPrediction, ScoringError> {
    let correct = match_answers(question, &prediction.answer, truth, grader)?;
    let freeform = freeform_brier(prediction.probability, correct)?;
    let binary_brier = if binary {
        Some(binary_brier_for_answer(
            &prediction.answer,
            prediction.probability,
            truth,
        )?)
    } else {
        None
    };
    Ok(GradedPrediction {
        prediction,
        correct,
        freeform_brier: freeform,
        binary_brier,
        grader_id: grader.model_id().to_string(),
    })
}

/// Binary Brier for a Yes/No prediction. A stated "No" with probability `q`
/// is a YES probability of `1 - q`.
pub fn binary_brier_for_answer(answer: &str, q: f64, truth: &str) -> Result<f64, ScoringError> {
    check_probability(q)?;
    let says_yes = answer_normal_form(answer) == "yes";
    let p_yes = if says_yes { q } else { 1.0 - q };
    binary_brier(p_yes, answer_normal_form(truth) == "yes")
}

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalReport, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Table,
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "table" => Ok(Self::Table),
            "plotdata" => Ok(Self::Plotdata),
            other => Err(HarnessError::InvalidArgument(format!(
                "unknown report format {other:?} (expected json, table or plotdata)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFile {
    pub name: String,
    pub contents: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn table(report: &EvalReport) -> String {
    let rows: Vec<(&str, String)> = vec![
        ("dataset", report.dataset_id.clone()),
        ("forecaster", report.forecaster.clone()),
        ("grader", report.grader.clone()),
        ("samples", report.n_samples.to_string()),
        ("attempts per sample", report.attempts_per_sample.to_string()),
        (
            "retrieval",
            if report.with_retrieval {
                format!("top-{}", report.retrieval_k)
            } else {
                "off".into()
            },
        ),
        (
            "accuracy",
            format!("{:.4} (avg@{})", report.accuracy, report.attempts_per_sample),
        ),
        ("mean free-form Brier", format!("{:.4}", report.mean_freeform_brier)),
        ("mean binary Brier", opt(report.mean_binary_brier)),
        ("failed predictions", report.failed_predictions.to_string()),
        ("failed samples", report.failed_samples.to_string()),
    ];
    let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in &rows {
        let _ = writeln!(out, "{k:<w$}  {v}");
    }
    let _ = writeln!(out, "\nCalibration");
    let _ = writeln!(
        out,
        "{:<13}  {:>6}  {:>10}  {:>8}",
        "bin", "count", "confidence", "accuracy"
    );
    for b in &report.calibration {
        let _ = writeln!(
            out,
            "{:<13}  {:>6}  {:>10}  {:>8}",
            format!(
                "[{:.2}, {:.2}{}",
                b.bin_low,
                b.bin_high,
                if b.bin_high >= 1.0 { "]" } else { ")" }
            ),
            b.count,
            opt(b.mean_confidence),
            opt(b.empirical_accuracy)
        );
    }
    let _ = writeln!(out, "\nMonthly");
    let _ = writeln!(out, "{:<7}  {:>6}  {:>8}  {:>8}", "month", "n", "accuracy", "brier");
    for m in &report.monthly {
        let _ = writeln!(out, "{:<7}  {:>6}  {:>8.4}  {:>8.4}", m.month, m.n, m.accuracy, m.brier);
    }
    out
}

fn calibration_csv(report: &EvalReport) -> String {
    let mut out = String::from("bin_low,bin_high,count,mean_confidence,empirical_accuracy\n");
    for b in report.calibration.iter().filter(|b| b.count > 0) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            b.bin_low,
            b.bin_high,
            b.count,
            b.mean_confidence.unwrap_or(f64::NAN),
            b.empirical_accuracy.unwrap_or(f64::NAN)
        );
    }
    out
}

/// Accuracy against mean free-form Brier, one point per report.
pub fn render_scatter_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("dataset,forecaster,with_retrieval,accuracy,mean_freeform_brier\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.dataset_id),
            csv_field(&r.forecaster),
            r.with_retrieval,
            r.accuracy,
            r.mean_freeform_brier
        );
    }
    out
}

/// Renders `report` as one or more named files.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<RenderedFile>, HarnessError> {
    Ok(match format {
        ReportFormat::Json => vec![RenderedFile {
            name: "report.json".into(),
            contents: serde_json::to_string_pretty(report).map_err(std::io::Error::other)? + "\n",
        }],
        ReportFormat::Table => vec![RenderedFile {
            name: "report.txt".into(),
            contents: table(report),
        }],
        ReportFormat::Plotdata => vec![
            RenderedFile {
                name: "calibration.csv".into(),
                contents: calibration_csv(report),
            },
            RenderedFile {
                name: "scatter.csv".into(),
                contents: render_scatter_csv(std::slice::from_ref(report)),
            },
        ],
    })
}

use std::fmt::Write as _;
use std::ops::AddAssign;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stages::{fix_leakage, generate_samples, select_best, validate_sample};
use super::{
    answer_type_filter, resolution_cutoff_filter, string_leak_filter, ForecastSample, QgenConfig, QgenError, Stage,
    StageReport,
};
use crate::corpus::Article;
use crate::gateway::CompletionClient;

/// Audit counters for events that drop or alter work without failing the run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub creator_failures: u64,
    pub selector_failures: u64,
    pub malformed_blocks: u64,
    pub answer_too_long: u64,
    pub surplus_blocks: u64,
    pub verdict_unparsed: u64,
    pub selection_unparsed: u64,
    pub no_good_question: u64,
    pub leak_edits_applied: u64,
    pub leak_edit_rejected: u64,
    pub leak_edit_unparsed: u64,
    pub resolution_date_fallback: u64,
}

impl AddAssign<&Counters> for Counters {
    fn add_assign(&mut self, o: &Counters) {
        self.creator_failures += o.creator_failures;
        self.selector_failures += o.selector_failures;
        self.malformed_blocks += o.malformed_blocks;
        self.answer_too_long += o.answer_too_long;
        self.surplus_blocks += o.surplus_blocks;
        self.verdict_unparsed += o.verdict_unparsed;
        self.selection_unparsed += o.selection_unparsed;
        self.no_good_question += o.no_good_question;
        self.leak_edits_applied += o.leak_edits_applied;
        self.leak_edit_rejected += o.leak_edit_rejected;
        self.leak_edit_unparsed += o.leak_edit_unparsed;
        self.resolution_date_fallback += o.resolution_date_fallback;
    }
}

#[derive(Clone, Copy)]
pub struct PipelineClients<'a> {
    pub creator: &'a dyn CompletionClient,
    pub selector: &'a dyn CompletionClient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub samples: Vec<ForecastSample>,
    pub reports: Vec<StageReport>,
    pub counters: Counters,
}

#[derive(Default)]
struct ArticleOutcome {
    generated: u64,
    valid: u64,
    selected: Option<ForecastSample>,
    counters: Counters,
}

fn process_article(
    article: &Article,
    clients: PipelineClients<'_>,
    config: &QgenConfig,
) -> Result<ArticleOutcome, QgenError> {
    let mut out = ArticleOutcome::default();
    let generated = generate_samples(article, clients.creator, config, &mut out.counters)?;
    out.generated = generated.len() as u64;
    let mut valid = Vec::new();
    for sample in generated {
        if validate_sample(&sample, article, clients.selector, &mut out.counters)? {
            valid.push(sample);
        }
    }
    out.valid = valid.len() as u64;
    if let Some(best) = select_best(valid, clients.selector, &mut out.counters)? {
        out.selected = Some(fix_leakage(best, clients.selector, &mut out.counters)?);
    }
    Ok(out)
}

/// Runs every stage over `articles`. Articles are processed concurrently
/// (at most `config.max_in_flight` at a time); output order follows input
/// order regardless of completion order.
pub fn run_pipeline(
    articles: &[Article],
    clients: PipelineClients<'_>,
    config: &QgenConfig,
) -> Result<PipelineOutput, QgenError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight)
        .build()
        .map_err(|e| QgenError::Pool(e.to_string()))?;
    let outcomes: Vec<ArticleOutcome> = pool.install(|| {
        articles
            .par_iter()
            .map(|a| process_article(a, clients, config))
            .collect::<Result<_, _>>()
    })?;

    let mut counters = Counters::default();
    let (mut generated, mut valid) = (0u64, 0u64);
    let mut selected = Vec::new();
    for o in outcomes {
        counters += &o.counters;
        generated += o.generated;
        valid += o.valid;
        selected.extend(o.selected);
    }
    let n_selected = selected.len() as u64;
    let mut reports = vec![
        StageReport::new(Stage::QuestionGeneration, articles.len() as u64, generated),
        StageReport::new(Stage::Validation, generated, valid),
        StageReport::new(Stage::BestSelection, valid, n_selected),
        StageReport::new(Stage::LeakageEdit, n_selected, n_selected),
    ];
    let (samples, filter_reports) = apply_filters(selected, config);
    reports.extend(filter_reports);
    if let Some(bad) = samples.iter().find(|s| !string_leak_filter(s, config.leak_mode)) {
        unreachable!("leaking sample {} survived the string filter", bad.sample_id);
    }
    Ok(PipelineOutput {
        samples,
        reports,
        counters,
    })
}

/// The model-free stages: string leak, answer type, resolution cutoff.
pub fn apply_filters(samples: Vec<ForecastSample>, config: &QgenConfig) -> (Vec<ForecastSample>, Vec<StageReport>) {
    let mut reports = Vec::with_capacity(3);
    let mut step = |stage: Stage, input: Vec<ForecastSample>, keep: &dyn Fn(&ForecastSample) -> bool| {
        let n_in = input.len() as u64;
        let out: Vec<ForecastSample> = input.into_iter().filter(|s| keep(s)).collect();
        reports.push(StageReport::new(stage, n_in, out.len() as u64));
        out
    };
    let s = step(Stage::StringLeakFilter, samples, &|s| {
        string_leak_filter(s, config.leak_mode)
    });
    let s = step(Stage::AnswerTypeFilter, s, &answer_type_filter);
    let s = step(Stage::ResolutionCutoff, s, &|s| {
        resolution_cutoff_filter(s, config.resolve_after)
    });
    (s, reports)
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Human-readable attrition table. Leakage editing and the string filter
/// share one "Fixing Leakage" row; percentages are relative to the number
/// of generated questions.
pub fn render_attrition_table(reports: &[StageReport], resolve_after: NaiveDate) -> String {
    let find = |s: Stage| reports.iter().find(|r| r.stage_name == s.as_str());
    let generated = find(Stage::QuestionGeneration).map(|r| r.output_count);
    let mut rows: Vec<(String, u64, bool)> = Vec::new();
    if let Some(g) = find(Stage::QuestionGeneration) {
        rows.push(("Source Articles".into(), g.input_count, false));
    }
    let mut i = 0;
    while i < reports.len() {
        let r = &reports[i];
        let merged_leak = r.stage_name == Stage::LeakageEdit.as_str()
            && reports
                .get(i + 1)
                .is_some_and(|n| n.stage_name == Stage::StringLeakFilter.as_str());
        let (label, count) = if merged_leak {
            i += 1;
            ("Fixing Leakage".to_string(), reports[i].output_count)
        } else {
            let label = match r.stage_name.as_str() {
                "question_generation" => "Question Generation".into(),
                "validation" => "Validation".into(),
                "best_selection" => "Best Question Selection".into(),
                "leakage_edit" => "Leakage Editing".into(),
                "string_leak_filter" => "Fixing Leakage".into(),
                "answer_type_filter" => "Answer Type Filtering".into(),
                "resolution_cutoff" => format!("Resolving after {resolve_after}"),
                other => other.to_string(),
            };
            (label, r.output_count)
        };
        rows.push((label, count, true));
        i += 1;
    }
    if let Some(last) = reports.last() {
        rows.push(("Final Set".into(), last.output_count, true));
    }

    let cell = |count: u64, pct: bool| {
        let mut s = thousands(count);
        if pct {
            match generated {
                Some(g) if g > 0 => {
                    let p = (count as f64 * 100.0 / g as f64).round();
                    let _ = write!(s, " ({p}%)");
                }
                _ => s.push_str(" (-)"),
            }
        }
        s
    };
    let cells: Vec<(String, String)> = rows
        .iter()
        .map(|(label, count, pct)| (label.clone(), cell(*count, *pct)))
        .collect();
    let w0 = cells.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Stage".len());
    let w1 = cells
        .iter()
        .map(|(_, c)| c.len())
        .max()
        .unwrap_or(0)
        .max("Number (%Total)".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<w0$} | {:>w1$}", "Stage", "Number (%Total)");
    let _ = writeln!(out, "{}-+-{}", "-".repeat(w0), "-".repeat(w1));
    for (label, c) in &cells {
        let _ = writeln!(out, "{label:<w0$} | {c:>w1$}");
    }
    out
}

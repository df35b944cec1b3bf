use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context as _, Result};
use chrono::NaiveDate;
use qforge_core::corpus::{self, FieldMapping};
use qforge_core::gateway::Role;
use qforge_core::harness::{
    self, aggregate, build_prompt, read_records, render_report, write_records, ReportFormat, ReportMeta,
    RetrievalContext,
};
use qforge_core::qgen::{apply_filters, render_attrition_table, run_pipeline, Counters, LeakMode, PipelineClients};
use qforge_core::retrieval::{chunk_article, BuildOptions, WhitespaceTokenizer};
use qforge_core::reward::{emit_training_batch, training_mode, Completion, TrainingSampler};
use qforge_core::{
    Chunk, EvalReport, ForecastSample, Index, PredictionRecord, QuestionKind, RewardGroup, RewardMode, StageReport,
};
use serde::Serialize;
use tracing::{info, warn};

use crate::context::Context;
use crate::io::{create, read_json, read_jsonl, write_json, write_jsonl};

fn or(path: Option<PathBuf>, default: &std::path::Path) -> PathBuf {
    path.unwrap_or_else(|| default.to_path_buf())
}

pub fn ingest(ctx: &Context, input: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let cfg = &ctx.config;
    let input = or(input, &cfg.paths.raw_articles);
    let output = or(output, &cfg.paths.articles);
    let (articles, stats) = corpus::ingest(&input, cfg.corpus.fields.clone())?;
    if ctx.strict && stats.skipped_total() > 0 {
        bail!("{} records skipped: {:?}", stats.skipped_total(), stats.skipped);
    }
    let read = articles.len();
    let deduped: Vec<_> = corpus::dedup(articles).collect();
    let n_dedup = deduped.len();
    let kept: Vec<_> = corpus::filter_window(
        deduped,
        cfg.corpus.window_start,
        cfg.corpus.window_end,
        &cfg.corpus.language,
    )?
    .collect();
    corpus::write_articles(create(&output)?, &kept)?;
    println!(
        "records {}  parsed {}  skipped {}  after dedup {}  in window {}  -> {}",
        stats.records,
        read,
        stats.skipped_total(),
        n_dedup,
        kept.len(),
        output.display()
    );
    for (reason, n) in &stats.skipped {
        println!("  skipped {reason}: {n}");
    }
    Ok(())
}

fn read_articles(path: &std::path::Path) -> Result<Vec<qforge_core::Article>> {
    let (articles, stats) = corpus::ingest(path, FieldMapping::article_schema())?;
    if stats.skipped_total() > 0 {
        warn!(skipped = stats.skipped_total(), "unreadable article records ignored");
    }
    Ok(articles)
}

pub fn build_index(
    ctx: &Context,
    articles: Option<PathBuf>,
    output: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let cfg = &ctx.config;
    let articles = read_articles(&or(articles, &cfg.paths.articles))?;
    let output = or(output, &cfg.paths.index);
    let mut chunks = Vec::new();
    for a in &articles {
        chunks.extend(chunk_article(a, cfg.retrieval.chunk_tokens, &WhitespaceTokenizer)?);
    }
    info!(articles = articles.len(), chunks = chunks.len(), "chunked");
    let embedder = ctx.embedder()?;
    let checkpoint = checkpoint.unwrap_or_else(|| {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".ckpt.jsonl");
        output.with_file_name(name)
    });
    let opts = BuildOptions {
        batch_size: cfg.retrieval.embed_batch_size,
        max_in_flight: cfg.eval.max_in_flight,
        checkpoint: Some(checkpoint),
    };
    let index = Index::build(chunks, &embedder, &opts)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    index.save(&output)?;
    println!(
        "indexed {} chunks from {} articles (dimension {}) -> {}",
        index.len(),
        articles.len(),
        index.dimension(),
        output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct StageReportFile<'a> {
    reports: &'a [StageReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    counters: Option<&'a Counters>,
}

pub fn generate(
    ctx: &Context,
    articles: Option<PathBuf>,
    output: Option<PathBuf>,
    report: Option<PathBuf>,
    limit: Option<usize>,
) -> Result<()> {
    let cfg = &ctx.config;
    let mut articles = read_articles(&or(articles, &cfg.paths.articles))?;
    if let Some(n) = limit {
        articles.truncate(n);
    }
    let creator = ctx.chat(Role::Creator)?;
    let selector = ctx.chat(Role::Selector)?;
    let out = run_pipeline(
        &articles,
        PipelineClients {
            creator: &creator,
            selector: &selector,
        },
        &cfg.qgen,
    )?;
    let failures = out.counters.creator_failures + out.counters.selector_failures;
    if ctx.strict && failures > 0 {
        bail!("{failures} model calls failed during generation");
    }
    let output = or(output, &cfg.paths.samples);
    write_jsonl(&output, &out.samples)?;
    write_json(
        &or(report, &cfg.paths.stage_report),
        &StageReportFile {
            reports: &out.reports,
            counters: Some(&out.counters),
        },
    )?;
    print!("{}", render_attrition_table(&out.reports, cfg.qgen.resolve_after));
    println!("{} samples -> {}", out.samples.len(), output.display());
    Ok(())
}

pub fn filter(
    ctx: &Context,
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    resolve_after: Option<NaiveDate>,
    leak_mode: Option<LeakMode>,
) -> Result<()> {
    let mut qgen = ctx.config.qgen.clone();
    if let Some(d) = resolve_after {
        qgen.resolve_after = d;
    }
    if let Some(m) = leak_mode {
        qgen.leak_mode = m;
    }
    let input = or(input, &ctx.config.paths.samples);
    let output = or(output, &input);
    let samples: Vec<ForecastSample> = read_jsonl(&input)?;
    let (kept, reports) = apply_filters(samples, &qgen);
    write_jsonl(&output, &kept)?;
    for r in &reports {
        println!("{:<20} {:>8} -> {:>8}", r.stage_name, r.input_count, r.output_count);
    }
    println!("{} samples -> {}", kept.len(), output.display());
    Ok(())
}

pub struct EvaluateArgs {
    pub samples: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub with_retrieval: bool,
    pub k: Option<usize>,
    pub attempts: Option<u32>,
    pub dataset_id: Option<String>,
}

fn print_summary(report: &EvalReport) {
    println!(
        "{}: n={} accuracy={:.4} freeform_brier={:.4} failed_predictions={}",
        report.dataset_id, report.n_samples, report.accuracy, report.mean_freeform_brier, report.failed_predictions
    );
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> Result<()> {
    let cfg = &ctx.config;
    let mut eval = cfg.eval.clone();
    eval.with_retrieval |= args.with_retrieval;
    if let Some(k) = args.k {
        eval.k = k;
    }
    if let Some(n) = args.attempts {
        eval.attempts_per_sample = n;
    }
    if let Some(id) = args.dataset_id {
        eval.dataset_id = id;
    }
    let dataset: Vec<ForecastSample> = read_jsonl(&or(args.samples, &cfg.paths.samples))?;
    let forecaster = ctx.chat(Role::Forecaster)?;
    let grader = ctx.chat(Role::Grader)?;
    let (index, embedder) = if eval.with_retrieval {
        let index =
            Index::load(&cfg.paths.index).with_context(|| format!("loading index {}", cfg.paths.index.display()))?;
        let embedder = ctx.embedder()?;
        ensure!(
            index.embed_model() == embedder.binding().model,
            "index was built with {} but the embedder role is bound to {}",
            index.embed_model(),
            embedder.binding().model
        );
        (Some(index), Some(embedder))
    } else {
        (None, None)
    };
    let retrieval = match (&index, &embedder) {
        (Some(index), Some(embedder)) => Some(RetrievalContext { index, embedder }),
        _ => None,
    };
    let run = harness::evaluate(&dataset, &forecaster, &grader, retrieval, &eval)?;
    let predictions = or(args.predictions, &cfg.paths.predictions);
    write_records(create(&predictions)?, &run.records)?;
    write_json(&or(args.report, &cfg.paths.report), &run.report)?;
    print_summary(&run.report);
    Ok(())
}

pub fn score(
    ctx: &Context,
    samples: Option<PathBuf>,
    predictions: Option<PathBuf>,
    output: Option<PathBuf>,
    report: Option<PathBuf>,
) -> Result<()> {
    let cfg = &ctx.config;
    let dataset: Vec<ForecastSample> = read_jsonl(&or(samples, &cfg.paths.samples))?;
    let predictions = or(predictions, &cfg.paths.predictions);
    let records = read_records(std::io::BufReader::new(
        fs::File::open(&predictions).with_context(|| format!("opening {}", predictions.display()))?,
    ))?;
    let grader = ctx.chat(Role::Grader)?;
    let regraded = harness::regrade(&records, &dataset, &grader, cfg.eval.max_in_flight)?;
    if ctx.strict {
        if let Some(bad) = regraded.iter().find(|r| !r.is_ok()) {
            bail!(
                "{} attempt {}: {}",
                bad.sample_id,
                bad.attempt,
                bad.error.as_deref().unwrap_or("failed")
            );
        }
    }
    let report_path = or(report, &cfg.paths.report);
    let previous: Option<EvalReport> = report_path
        .exists()
        .then(|| read_json(&report_path))
        .transpose()
        .ok()
        .flatten();
    let meta = ReportMeta {
        dataset_id: previous
            .as_ref()
            .map_or_else(|| cfg.eval.dataset_id.clone(), |r| r.dataset_id.clone()),
        forecaster: previous.as_ref().map_or_else(
            || {
                cfg.binding(Role::Forecaster)
                    .map(|b| b.model)
                    .unwrap_or_else(|_| "unknown".into())
            },
            |r| r.forecaster.clone(),
        ),
        grader: grader.binding().model.clone(),
        attempts_per_sample: regraded.iter().map(|r| r.attempt + 1).max().unwrap_or(0),
        with_retrieval: regraded.iter().any(|r| r.cutoff.is_some()),
        retrieval_k: previous.as_ref().map_or(cfg.eval.k, |r| r.retrieval_k),
        calibration_bins: cfg.eval.calibration_bins,
    };
    let report = aggregate(&regraded, &meta)?;
    write_records(create(&or(output, &predictions))?, &regraded)?;
    write_json(&report_path, &report)?;
    print_summary(&report);
    Ok(())
}

pub struct RewardArgs {
    pub samples: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub group_size: Option<usize>,
    pub mode: Option<RewardMode>,
    pub with_retrieval: bool,
}

pub fn reward(ctx: &Context, args: RewardArgs) -> Result<()> {
    let cfg = &ctx.config;
    let Some(k) = args.group_size.or(cfg.reward.group_size) else {
        bail!("group size K is required: set reward.group_size or pass --group-size");
    };
    let mode = args.mode.unwrap_or(cfg.reward.mode);
    let dataset: Vec<ForecastSample> = read_jsonl(&or(args.samples, &cfg.paths.samples))?;
    let by_id: HashMap<&str, &ForecastSample> = dataset.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let predictions = or(args.predictions, &cfg.paths.predictions);
    let records: Vec<PredictionRecord> = read_jsonl(&predictions)?;

    let index = if args.with_retrieval {
        Some(Index::load(&cfg.paths.index).with_context(|| format!("loading index {}", cfg.paths.index.display()))?)
    } else {
        None
    };
    let chunk_by_id: HashMap<&str, &Chunk> = index
        .iter()
        .flat_map(|i| i.chunks())
        .map(|c| (c.chunk_id.as_str(), c))
        .collect();

    // Group in order of first appearance so output is deterministic.
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&PredictionRecord>> = HashMap::new();
    for r in &records {
        groups
            .entry(r.sample_id.as_str())
            .or_insert_with(|| {
                order.push(&r.sample_id);
                Vec::new()
            })
            .push(r);
    }

    let mut sampler = TrainingSampler::new(cfg.reward.seed);
    let (mut freeform, mut binary) = (Vec::new(), Vec::new());
    let mut skipped = 0usize;
    for id in order {
        let sample = by_id
            .get(id)
            .with_context(|| format!("prediction for unknown sample {id}"))?;
        let completions: Vec<Completion> = groups[id]
            .iter()
            .filter_map(|r| match (r.is_ok(), &r.prediction, r.correct) {
                (true, Some(p), Some(correct)) => Some(Completion {
                    prediction: p.clone(),
                    correct,
                }),
                _ => None,
            })
            .collect();
        if completions.len() != k {
            let msg = format!("{id}: {} usable completions, K = {k}", completions.len());
            if ctx.strict {
                bail!(msg);
            }
            warn!("{msg}; group skipped");
            skipped += 1;
            continue;
        }
        let kind = sample.question_kind;
        let group = RewardGroup::new(id, completions, training_mode(kind, mode), kind, k)?;
        let prompt = if args.with_retrieval {
            let n = sampler.chunk_count();
            let retrieved = &groups[id][0].retrieved_chunk_ids;
            let chunks: Vec<Chunk> = retrieved
                .iter()
                .filter_map(|c| chunk_by_id.get(c.as_str()).map(|c| (*c).clone()))
                .take(n)
                .collect();
            build_prompt(sample, &chunks, true)?
        } else {
            build_prompt(sample, &[], false)?
        };
        match kind {
            QuestionKind::Freeform => freeform.push((group, prompt)),
            QuestionKind::Binary => binary.push((group, prompt)),
        }
    }
    let (n_free, n_bin) = (freeform.len(), binary.len());
    let (groups, prompts): (Vec<RewardGroup>, Vec<String>) = sampler.mix(freeform, binary).into_iter().unzip();
    let output = or(args.output, &cfg.paths.training_batch);
    emit_training_batch(create(&output)?, &groups, &prompts)?;
    println!(
        "{} groups ({} free-form, {} binary, {} skipped), K = {}, mode = {} -> {}",
        groups.len(),
        n_free,
        n_bin,
        skipped,
        k,
        mode,
        output.display()
    );
    Ok(())
}

pub fn report(ctx: &Context, input: Option<PathBuf>, format: ReportFormat, out_dir: Option<PathBuf>) -> Result<()> {
    let input = or(input, &ctx.config.paths.report);
    let report: EvalReport = read_json(&input)?;
    let files = render_report(&report, format)?;
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for f in files {
                let path = dir.join(&f.name);
                fs::write(&path, f.contents).with_context(|| format!("writing {}", path.display()))?;
                println!("{}", path.display());
            }
        }
        None => {
            for f in files {
                print!("{}", f.contents);
            }
        }
    }
    Ok(())
}

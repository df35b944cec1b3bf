mod commands;
mod context;
mod io;

use std::path::PathBuf;

use anyhow::Result;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use qforge_core::harness::ReportFormat;
use qforge_core::qgen::LeakMode;
use qforge_core::RewardMode;
use tracing_subscriber::EnvFilter;

use crate::context::Context;

/// Forecasting-question synthesis, retrieval, evaluation and reward tooling.
#[derive(Debug, Parser)]
#[command(name = "qforge", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file. Defaults apply when omitted.
    #[arg(long, global = true, env = "QFORGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Response cache directory (overrides gateway.cache_dir).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Serve model calls from the cache only; a miss is an error.
    #[arg(long, global = true)]
    pub replay_only: bool,
    /// Seed for every randomized step (overrides reward.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Abort on the first skipped record, failed call or unparseable output.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize, deduplicate and date-filter raw article JSONL.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Chunk articles, embed the chunks and write the vector index.
    BuildIndex {
        #[arg(long)]
        articles: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Resume file for interrupted builds (default: <output>.ckpt.jsonl).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the question-synthesis pipeline over articles.
    Generate {
        #[arg(long)]
        articles: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Stage report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Process only the first N articles.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Re-run the model-free filters over existing samples.
    Filter {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        resolve_after: Option<NaiveDate>,
        #[arg(long, value_parser = parse_leak_mode)]
        leak_mode: Option<LeakMode>,
    },
    /// Forecast, grade and score a dataset.
    Evaluate {
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Per-prediction JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        with_retrieval: bool,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        attempts: Option<u32>,
        #[arg(long)]
        dataset_id: Option<String>,
    },
    /// Re-grade existing predictions and recompute the report.
    Score {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Where re-graded predictions go (default: overwrite the input).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compute rewards and group advantages; emit a training batch.
    Reward {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Completions per group (overrides reward.group_size).
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long, value_parser = parse_reward_mode)]
        mode: Option<RewardMode>,
        /// Add retrieved chunks (a random 0-5 per prompt) from the index.
        #[arg(long)]
        with_retrieval: bool,
    },
    /// Render a saved report as json, table or plotdata.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "table", value_parser = parse_format)]
        format: ReportFormat,
        /// Output directory; without it the files are printed to stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_leak_mode(s: &str) -> Result<LeakMode, String> {
    match s {
        "exact_answer" => Ok(LeakMode::ExactAnswer),
        "answer_tokens" => Ok(LeakMode::AnswerTokens),
        other => Err(format!("unknown leak mode {other:?} (exact_answer, answer_tokens)")),
    }
}

fn parse_reward_mode(s: &str) -> Result<RewardMode, String> {
    s.parse().map_err(|e: qforge_core::reward::RewardError| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: qforge_core::harness::HarnessError| e.to_string())
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("QFORGE_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    let ctx = Context::new(&cli.global)?;
    match cli.command {
        Command::Ingest { input, output } => commands::ingest(&ctx, input, output),
        Command::BuildIndex {
            articles,
            output,
            checkpoint,
        } => commands::build_index(&ctx, articles, output, checkpoint),
        Command::Generate {
            articles,
            output,
            report,
            limit,
        } => commands::generate(&ctx, articles, output, report, limit),
        Command::Filter {
            input,
            output,
            resolve_after,
            leak_mode,
        } => commands::filter(&ctx, input, output, resolve_after, leak_mode),
        Command::Evaluate {
            samples,
            predictions,
            report,
            with_retrieval,
            k,
            attempts,
            dataset_id,
        } => commands::evaluate(
            &ctx,
            commands::EvaluateArgs {
                samples,
                predictions,
                report,
                with_retrieval,
                k,
                attempts,
                dataset_id,
            },
        ),
        Command::Score {
            samples,
            predictions,
            output,
            report,
        } => commands::score(&ctx, samples, predictions, output, report),
        Command::Reward {
            samples,
            predictions,
            output,
            group_size,
            mode,
            with_retrieval,
        } => commands::reward(
            &ctx,
            commands::RewardArgs {
                samples,
                predictions,
                output,
                group_size,
                mode,
                with_retrieval,
            },
        ),
        Command::Report { input, format, out_dir } => commands::report(&ctx, input, format, out_dir),
    }
}

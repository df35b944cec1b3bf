use tracing::debug;

use super::{answer_within_word_limit, Counters, ForecastSample, QgenConfig, QgenError};
use crate::corpus::Article;
use crate::gateway::parse::{parse_sample_blocks, parse_verdict, render_blocks, RawSample};
use crate::gateway::CompletionClient;
use crate::templates;
use crate::text::normalize_text;

const NO_GOOD_QUESTION: &str = "NO GOOD QUESTION";

/// Article text as shown to the creator and selector.
pub fn render_article(article: &Article) -> String {
    format!(
        "Title: {}\nPublish Date: {}\n\n{}",
        article.title,
        article.publish_date.format("%B %-d, %Y"),
        article.body
    )
}

/// Stage 1. Asks the creator for `config.num_questions` questions and
/// keeps the well-formed blocks whose answer fits the word limit.
pub fn generate_samples(
    article: &Article,
    creator: &dyn CompletionClient,
    config: &QgenConfig,
    counters: &mut Counters,
) -> Result<Vec<ForecastSample>, QgenError> {
    let n = config.num_questions.to_string();
    let n_minus_one = config.num_questions.saturating_sub(1).to_string();
    let prompt = templates::stage1_generate().render(&[
        ("self.num_questions_per_article", &n),
        ("self.num_questions_per_article - 1", &n_minus_one),
        ("source_article", &render_article(article)),
    ])?;
    let response = match creator.complete(&prompt) {
        Ok(r) => r,
        Err(e) => {
            debug!(article = %article.id, error = %e, "creator failed");
            counters.creator_failures += 1;
            return Ok(Vec::new());
        }
    };
    let parsed = parse_sample_blocks(&response);
    counters.malformed_blocks += parsed.rejected.len() as u64;
    let mut out = Vec::new();
    for raw in parsed.samples {
        if !answer_within_word_limit(&raw.answer, config.max_answer_words) {
            counters.answer_too_long += 1;
            continue;
        }
        if out.len() == config.num_questions {
            counters.surplus_blocks += 1;
            continue;
        }
        let (sample, fell_back) = ForecastSample::from_raw(&raw, article, format!("{}-{}", article.id, out.len()));
        counters.resolution_date_fallback += u64::from(fell_back);
        out.push(sample);
    }
    Ok(out)
}

/// Stage 2. True iff the selector's final verdict is 1. Unparseable
/// verdicts and selector failures count as invalid.
pub fn validate_sample(
    sample: &ForecastSample,
    article: &Article,
    selector: &dyn CompletionClient,
    counters: &mut Counters,
) -> Result<bool, QgenError> {
    let raw = sample.to_raw();
    let prompt = templates::stage2_validate().render(&[
        ("source_article", &render_article(article)),
        ("questions_text", &raw.to_block(1)),
    ])?;
    let response = match selector.complete(&prompt) {
        Ok(r) => r,
        Err(e) => {
            debug!(sample = %sample.sample_id, error = %e, "validation call failed");
            counters.selector_failures += 1;
            return Ok(false);
        }
    };
    match parse_verdict(&response) {
        Ok(v) => Ok(v),
        Err(_) => {
            counters.verdict_unparsed += 1;
            Ok(false)
        }
    }
}

/// Stage 3. A single candidate is returned as is without a model call.
/// Otherwise the selector picks one; its echo is matched back to the
/// original candidate by title so the kept sample is never the model's
/// paraphrase.
pub fn select_best(
    candidates: Vec<ForecastSample>,
    selector: &dyn CompletionClient,
    counters: &mut Counters,
) -> Result<Option<ForecastSample>, QgenError> {
    if candidates.len() <= 1 {
        return Ok(candidates.into_iter().next());
    }
    let raws: Vec<RawSample> = candidates.iter().map(ForecastSample::to_raw).collect();
    let refs: Vec<&RawSample> = raws.iter().collect();
    let prompt = templates::stage3_select().render(&[("questions_text", &render_blocks(&refs))])?;
    let response = match selector.complete(&prompt) {
        Ok(r) => r,
        Err(e) => {
            debug!(error = %e, "selection call failed");
            counters.selector_failures += 1;
            return Ok(None);
        }
    };
    let parsed = parse_sample_blocks(&response);
    let tail = &response[parsed.last_block_end.unwrap_or(0)..];
    if tail.contains(NO_GOOD_QUESTION) {
        counters.no_good_question += 1;
        return Ok(None);
    }
    let Some(choice) = parsed.samples.last() else {
        counters.selection_unparsed += 1;
        return Ok(None);
    };
    let key = normalize_text(&choice.question_title).to_lowercase();
    match candidates
        .into_iter()
        .find(|c| normalize_text(&c.question_title).to_lowercase() == key)
    {
        Some(c) => Ok(Some(c)),
        None => {
            counters.selection_unparsed += 1;
            Ok(None)
        }
    }
}

/// Stage 4. Applies the selector's rewrite of background and criteria.
/// A rewrite that alters the title, answer or answer type, or that cannot
/// be parsed, is discarded and the original kept.
pub fn fix_leakage(
    sample: ForecastSample,
    selector: &dyn CompletionClient,
    counters: &mut Counters,
) -> Result<ForecastSample, QgenError> {
    let prompt = templates::stage4_leakage().render(&[("questions_text", &sample.to_raw().to_block(1))])?;
    let response = match selector.complete(&prompt) {
        Ok(r) => r,
        Err(e) => {
            debug!(sample = %sample.sample_id, error = %e, "leakage edit failed");
            counters.selector_failures += 1;
            counters.leak_edit_unparsed += 1;
            return Ok(sample);
        }
    };
    let parsed = parse_sample_blocks(&response);
    let Some(edit) = parsed.samples.last() else {
        counters.leak_edit_unparsed += 1;
        return Ok(sample);
    };
    let same = |a: &str, b: &str| normalize_text(a) == normalize_text(b);
    if !same(&edit.question_title, &sample.question_title)
        || !same(&edit.answer, &sample.answer)
        || !same(&edit.answer_type, &sample.answer_type)
    {
        counters.leak_edit_rejected += 1;
        return Ok(sample);
    }
    if edit.background == sample.background && edit.resolution_criteria == sample.resolution_criteria.text {
        return Ok(sample);
    }
    counters.leak_edits_applied += 1;
    let fields = super::parse_criteria(&edit.resolution_criteria);
    let mut out = sample;
    out.background = edit.background.clone();
    out.resolution_criteria.text = edit.resolution_criteria.clone();
    out.resolution_criteria.source_of_truth = fields.source_of_truth;
    out.resolution_criteria.answer_format = fields.answer_format;
    Ok(out)
}

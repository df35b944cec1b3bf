use std::fmt::Write as _;

use crate::qgen::ForecastSample;
use crate::retrieval::Chunk;
use crate::templates::{self, TemplateError};

/// Renders the numbered article blocks that fill the retrieval slot.
pub fn render_passages(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        let _ = write!(
            out,
            "\nArticle {n}:\nTitle: {title}\nSource: {source}\nArticle Publish Date: {date}\nRelevant Passage: {text}\n",
            n = i + 1,
            title = c.title.trim(),
            source = c.source.trim(),
            date = c.publish_date.format("%B %-d, %Y"),
            text = c.text.trim(),
        );
    }
    out
}

/// Evaluation prompt for `sample`. With retrieval, `chunks` are listed in
/// the given order (possibly none); without, `chunks` is ignored.
pub fn build_prompt(sample: &ForecastSample, chunks: &[Chunk], with_retrieval: bool) -> Result<String, TemplateError> {
    let base = [
        ("question_title", sample.question_title.as_str()),
        ("question_background", sample.background.as_str()),
        ("resolution_criteria", sample.resolution_criteria.text.as_str()),
        ("expected_answer_type", sample.answer_type.as_str()),
    ];
    if with_retrieval {
        let passages = render_passages(chunks);
        let mut bindings = base.to_vec();
        bindings.push(("retrieved_news_articles_text", &passages));
        templates::eval_with_retrieval().render(&bindings)
    } else {
        templates::eval_no_retrieval().render(&base)
    }
}

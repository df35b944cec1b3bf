//! Parsers for the XML-tagged model responses.
//!
//! All parsers are total: any input string yields either a value or a
//! structured error, never a panic. When a tag occurs more than once the last
//! complete occurrence wins, since reasoning models often quote tags while
//! thinking before emitting the final ones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("missing <{0}> tag")]
    MissingTag(&'static str),
    #[error("empty <answer> tag")]
    EmptyAnswer,
    #[error("probability {0:?} is not a number")]
    InvalidProbability(String),
    #[error("verdict {0:?} is neither 0 nor 1")]
    InvalidVerdict(String),
}

/// Content of the last complete `<tag>…</tag>` span.
pub fn last_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut search_end = text.len();
    loop {
        let close_at = text[..search_end].rfind(&close)?;
        if let Some(open_at) = text[..close_at].rfind(&open) {
            return Some(&text[open_at + open.len()..close_at]);
        }
        search_end = close_at;
    }
}

/// Content of the first complete `<tag>…</tag>` span.
pub fn first_tag<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let open_at = text.find(&open)?;
    let body_start = open_at + open.len();
    let close_at = text[body_start..].find(&close)? + body_start;
    Some(&text[body_start..close_at])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub answer: String,
    pub probability: f64,
    /// Set when the stated probability fell outside [0, 1] and was clamped.
    pub probability_clamped: bool,
}

pub fn parse_prediction(response: &str) -> Result<ParsedPrediction, ParseError> {
    let answer = last_tag(response, "answer")
        .ok_or(ParseError::MissingTag("answer"))?
        .trim();
    let prob_raw = last_tag(response, "probability")
        .ok_or(ParseError::MissingTag("probability"))?
        .trim();
    if answer.is_empty() {
        return Err(ParseError::EmptyAnswer);
    }
    let value = parse_probability(prob_raw)?;
    let clamped = value.clamp(0.0, 1.0);
    Ok(ParsedPrediction {
        answer: answer.to_string(),
        probability: clamped,
        probability_clamped: clamped != value,
    })
}

fn parse_probability(raw: &str) -> Result<f64, ParseError> {
    let invalid = || ParseError::InvalidProbability(raw.to_string());
    let (number, scale) = match raw.strip_suffix('%') {
        Some(rest) => (rest.trim_end(), 100.0),
        None => (raw, 1.0),
    };
    let v: f64 = number.parse().map_err(|_| invalid())?;
    if !v.is_finite() {
        return Err(invalid());
    }
    Ok(v / scale)
}

/// Renders a response in the format the evaluation prompt asks for.
pub fn render_prediction(reasoning: &str, answer: &str, probability: f64) -> String {
    format!("{reasoning}\n<answer>{answer}</answer> <probability>{probability}</probability>")
}

/// Parses a 0/1 verdict from the last `<answer>` tag.
pub fn parse_verdict(response: &str) -> Result<bool, ParseError> {
    let raw = last_tag(response, "answer").ok_or(ParseError::MissingTag("answer"))?;
    match raw.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(ParseError::InvalidVerdict(other.to_string())),
    }
}

/// One question block as emitted by the sample creator, fields verbatim
/// (trimmed). `resolution_criteria` keeps any embedded HTML untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub question_id: Option<String>,
    pub question_title: String,
    pub background: String,
    pub resolution_criteria: String,
    pub answer: String,
    pub answer_type: String,
}

impl RawSample {
    /// Renders the sample as a `<qN>` block, the format every stage prompt
    /// exchanges.
    pub fn to_block(&self, number: usize) -> String {
        format!(
            "<q{n}>\n<question_id>{id}</question_id>\n<question_title>{t}</question_title>\n\
             <background>{b}</background>\n<resolution_criteria>{r}</resolution_criteria>\n\
             <answer>{a}</answer>\n<answer_type>{at}</answer_type>\n</q{n}>",
            n = number,
            id = number.saturating_sub(1),
            t = self.question_title,
            b = self.background,
            r = self.resolution_criteria,
            a = self.answer,
            at = self.answer_type,
        )
    }
}

/// Renders several samples as consecutive `<q1>…<qN>` blocks.
pub fn render_blocks(samples: &[&RawSample]) -> String {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.to_block(i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockDefect {
    Unterminated,
    MissingField(&'static str),
    EmptyField(&'static str),
}

impl BlockDefect {
    pub fn code(&self) -> String {
        match self {
            BlockDefect::Unterminated => "unterminated_block".into(),
            BlockDefect::MissingField(f) => format!("missing_{f}"),
            BlockDefect::EmptyField(f) => format!("empty_{f}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRejection {
    pub number: u32,
    pub defect: BlockDefect,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedBlocks {
    pub samples: Vec<RawSample>,
    pub rejected: Vec<BlockRejection>,
    /// Byte offset just past the last well-formed or malformed-but-closed
    /// block; `None` when the text contains no closed block.
    pub last_block_end: Option<usize>,
}

const REQUIRED_FIELDS: [&str; 5] = [
    "question_title",
    "background",
    "resolution_criteria",
    "answer",
    "answer_type",
];

/// Extracts every `<qN>…</qN>` block from `response`, tolerating prose
/// around and between blocks.
pub fn parse_sample_blocks(response: &str) -> ParsedBlocks {
    let mut out = ParsedBlocks::default();
    let mut cursor = 0;
    while let Some((open_start, open_end, number)) = find_block_open(response, cursor) {
        let close = format!("</q{number}>");
        let Some(close_rel) = response[open_end..].find(&close) else {
            out.rejected.push(BlockRejection {
                number,
                defect: BlockDefect::Unterminated,
            });
            cursor = open_end;
            continue;
        };
        let close_at = open_end + close_rel;
        let body = &response[open_end..close_at];
        cursor = close_at + close.len();
        out.last_block_end = Some(cursor);
        debug_assert!(open_start < open_end);
        match parse_block_body(body) {
            Ok(sample) => out.samples.push(sample),
            Err(defect) => out.rejected.push(BlockRejection { number, defect }),
        }
    }
    out
}

fn find_block_open(text: &str, from: usize) -> Option<(usize, usize, u32)> {
    let bytes = text.as_bytes();
    let mut pos = from;
    while let Some(rel) = text[pos..].find("<q") {
        let start = pos + rel;
        let digits_start = start + 2;
        let mut i = digits_start;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i > digits_start && i < bytes.len() && bytes[i] == b'>' {
            if let Ok(n) = text[digits_start..i].parse::<u32>() {
                return Some((start, i + 1, n));
            }
        }
        pos = digits_start;
    }
    None
}

fn parse_block_body(body: &str) -> Result<RawSample, BlockDefect> {
    let mut values = [""; 5];
    for (slot, field) in values.iter_mut().zip(REQUIRED_FIELDS) {
        let v = first_tag(body, field).ok_or(BlockDefect::MissingField(field))?.trim();
        if v.is_empty() {
            return Err(BlockDefect::EmptyField(field));
        }
        *slot = v;
    }
    let [question_title, background, resolution_criteria, answer, answer_type] = values;
    Ok(RawSample {
        question_id: first_tag(body, "question_id").map(|s| s.trim().to_string()),
        question_title: question_title.to_string(),
        background: background.to_string(),
        resolution_criteria: resolution_criteria.to_string(),
        answer: answer.to_string(),
        answer_type: answer_type.to_string(),
    })
}

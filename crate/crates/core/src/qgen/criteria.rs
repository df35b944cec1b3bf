//! Tolerant extraction of structured fields from generated resolution
//! criteria.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::{Captures, Regex};

use crate::text::collapse_whitespace;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CriteriaFields {
    pub source_of_truth: String,
    pub resolution_date_text: Option<String>,
    pub answer_format: String,
}

static ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<li(?-u:\b)[^>]*>(.*?)</li>").unwrap());
static LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)^\s*<b>\s*([^<]*?)\s*</b>\s*:?\s*(.*)$").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]*>").unwrap());

/// Splits `<li>` items into source of truth, resolution date and answer
/// format. Items are matched by their bold label, falling back to position.
pub fn parse_criteria(text: &str) -> CriteriaFields {
    let items: Vec<(Option<String>, String)> = ITEM
        .captures_iter(text)
        .map(|c| {
            let inner = c.get(1).map_or("", |m| m.as_str());
            match LABEL.captures(inner) {
                Some(l) => (Some(l[1].to_lowercase()), clean(&l[2])),
                None => (None, clean(inner)),
            }
        })
        .collect();
    if items.is_empty() {
        return CriteriaFields {
            source_of_truth: clean(text),
            ..Default::default()
        };
    }
    let by_label = |needle: &str| {
        items
            .iter()
            .find(|(label, _)| label.as_deref().is_some_and(|l| l.contains(needle)))
            .map(|(_, v)| v.clone())
    };
    let positional = |i: usize| items.get(i).map(|(_, v)| v.clone());
    let labelled = items.iter().any(|(l, _)| l.is_some());
    let pick = |needle: &str, i: usize| {
        if labelled {
            by_label(needle)
        } else {
            positional(i)
        }
    };
    CriteriaFields {
        source_of_truth: pick("source", 0).unwrap_or_default(),
        resolution_date_text: pick("date", 1),
        answer_format: pick("format", 2).unwrap_or_default(),
    }
}

fn clean(s: &str) -> String {
    collapse_whitespace(&TAG.replace_all(s, " "))
}

const MONTHS: &str = "jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?";

// ASCII word boundaries keep the lazy DFA usable on non-ASCII text.
static ISO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?-u:\b)([0-9]{4})-([0-9]{2})-([0-9]{2})(?-u:\b)").unwrap());
static MONTH_DAY_YEAR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)(?-u:\b)({MONTHS})\.?\s+([0-9]{{1,2}})(?:st|nd|rd|th)?,?\s+([0-9]{{4}})(?-u:\b)"
    ))
    .unwrap()
});
static DAY_MONTH_YEAR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)(?-u:\b)([0-9]{{1,2}})(?:st|nd|rd|th)?\s+(?:of\s+)?({MONTHS})\.?,?\s+([0-9]{{4}})(?-u:\b)"
    ))
    .unwrap()
});
static MONTH_YEAR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)(?-u:\b)({MONTHS})\.?,?\s+([0-9]{{4}})(?-u:\b)")).unwrap());

fn month_number(name: &str) -> Option<u32> {
    let key = name.get(..3)?.to_ascii_lowercase();
    let i = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ]
    .iter()
    .position(|m| *m == key)?;
    Some(i as u32 + 1)
}

fn last_day_of_month(year: i32, month: u32) -> Option<NaiveDate> {
    let first_next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)?
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)?
    };
    first_next.pred_opt()
}

/// First calendar date mentioned in `text`. Recognizes ISO dates,
/// "July 15, 2025", "15 July 2025" and, as a month-level fallback,
/// "July 2025" (read as the month's last day).
pub fn extract_date(text: &str) -> Option<NaiveDate> {
    let num = |c: &Captures<'_>, i: usize| c[i].parse::<u32>().ok();
    let ymd = |y: Option<u32>, m: Option<u32>, d: Option<u32>| NaiveDate::from_ymd_opt(y? as i32, m?, d?);
    // (byte offset, rank, date); full dates outrank month-level ones at the same offset.
    let mut found: Vec<(usize, u8, NaiveDate)> = Vec::new();
    let mut scan = |re: &Regex, rank: u8, f: &dyn Fn(&Captures<'_>) -> Option<NaiveDate>| {
        for c in re.captures_iter(text) {
            if let Some(d) = f(&c) {
                found.push((c.get(0).map_or(0, |m| m.start()), rank, d));
            }
        }
    };
    scan(&ISO, 0, &|c| ymd(num(c, 1), num(c, 2), num(c, 3)));
    scan(&MONTH_DAY_YEAR, 0, &|c| ymd(num(c, 3), month_number(&c[1]), num(c, 2)));
    scan(&DAY_MONTH_YEAR, 0, &|c| ymd(num(c, 3), month_number(&c[2]), num(c, 1)));
    scan(&MONTH_YEAR, 1, &|c| {
        last_day_of_month(num(c, 2)? as i32, month_number(&c[1])?)
    });
    found
        .into_iter()
        .min_by_key(|&(pos, rank, _)| (pos, rank))
        .map(|(_, _, d)| d)
}

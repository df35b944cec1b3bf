//! News corpus ingestion: JSONL reading, normalization, deduplication and
//! publish-window filtering.
//!
//! Input records are arbitrary JSON objects; a [`FieldMapping`] names which
//! keys hold the url, date, title, body and (optionally) source and language.
//! Records that do not satisfy the mapping are skipped and counted under a
//! reason code rather than aborting the run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use dashmap::DashSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::{collapse_whitespace, normalize_text};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("read error at line {line}: {source}")]
    Read { line: usize, source: io::Error },
    #[error("invalid window: start {start} is after end {end}")]
    InvalidWindow { start: NaiveDate, end: NaiveDate },
    #[error("write error: {0}")]
    Write(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub source: String,
    pub url: String,
    pub publish_date: NaiveDate,
    pub title: String,
    pub body: String,
    pub language: String,
}

impl Article {
    /// Stable identifier derived from the url alone, so re-ingesting a
    /// record always yields the same id.
    pub fn id_for_url(url: &str) -> String {
        let digest = Sha256::digest(url.trim().as_bytes());
        hex::encode(&digest[..16])
    }

    /// SHA-256 over the lowercased, whitespace-collapsed title and body.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(collapse_whitespace(&self.title.to_lowercase()).as_bytes());
        hasher.update([0u8]);
        hasher.update(collapse_whitespace(&self.body.to_lowercase()).as_bytes());
        hasher.finalize().into()
    }
}

/// Maps source-specific JSON keys onto [`Article`] fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub url: String,
    pub date: String,
    pub title: String,
    pub body: String,
    /// Key holding the outlet domain; when absent the url host is used.
    pub source: Option<String>,
    /// Key holding a BCP-47 tag; when absent `default_language` applies.
    pub language: Option<String>,
    pub default_language: String,
}

impl Default for FieldMapping {
    fn default() -> Self {
        Self {
            url: "url".into(),
            date: "date".into(),
            title: "title".into(),
            body: "body".into(),
            source: Some("source".into()),
            language: Some("language".into()),
            default_language: "en".into(),
        }
    }
}

impl FieldMapping {
    /// Mapping that reads this crate's own `Article` JSONL output.
    pub fn article_schema() -> Self {
        Self {
            date: "publish_date".into(),
            ..Self::default()
        }
    }
}

/// Why a record was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SkipReason {
    InvalidJson,
    MissingUrl,
    InvalidUrl,
    MissingDate,
    InvalidDate,
    MissingTitle,
    MissingBody,
}

impl SkipReason {
    pub fn code(self) -> &'static str {
        match self {
            SkipReason::InvalidJson => "invalid_json",
            SkipReason::MissingUrl => "missing_url",
            SkipReason::InvalidUrl => "invalid_url",
            SkipReason::MissingDate => "missing_date",
            SkipReason::InvalidDate => "invalid_date",
            SkipReason::MissingTitle => "missing_title",
            SkipReason::MissingBody => "missing_body",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub accepted: usize,
    pub skipped: BTreeMap<String, usize>,
}

impl IngestStats {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    fn skip(&mut self, reason: SkipReason) {
        *self.skipped.entry(reason.code().to_string()).or_default() += 1;
    }
}

/// Converts one JSON record into an [`Article`] under `mapping`.
pub fn article_from_record(record: &serde_json::Value, mapping: &FieldMapping) -> Result<Article, SkipReason> {
    let obj = record.as_object().ok_or(SkipReason::InvalidJson)?;
    let field = |key: &str| {
        obj.get(key)
            .and_then(|v| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
    };

    let url = field(&mapping.url).ok_or(SkipReason::MissingUrl)?;
    let parsed_url = url::Url::parse(url).map_err(|_| SkipReason::InvalidUrl)?;
    let date_raw = field(&mapping.date).ok_or(SkipReason::MissingDate)?;
    let publish_date = parse_publish_date(date_raw).ok_or(SkipReason::InvalidDate)?;
    let title = field(&mapping.title)
        .map(normalize_text)
        .filter(|t| !t.is_empty())
        .ok_or(SkipReason::MissingTitle)?;
    let body = field(&mapping.body)
        .map(normalize_text)
        .filter(|b| !b.is_empty())
        .ok_or(SkipReason::MissingBody)?;

    let source = mapping
        .source
        .as_deref()
        .and_then(field)
        .map(str::to_string)
        .or_else(|| parsed_url.host_str().map(str::to_string))
        .unwrap_or_default();
    let language = mapping
        .language
        .as_deref()
        .and_then(field)
        .unwrap_or(&mapping.default_language)
        .to_string();

    Ok(Article {
        id: Article::id_for_url(url),
        source,
        url: url.to_string(),
        publish_date,
        title,
        body,
        language,
    })
}

/// Accepts `YYYY-MM-DD`, RFC 3339 timestamps (converted to the UTC date), and
/// `YYYY-MM-DD HH:MM:SS`.
pub fn parse_publish_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc().date());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.date());
        }
    }
    None
}

/// Streaming reader over a JSONL file. Malformed records are counted in
/// [`ArticleReader::stats`]; only I/O failures surface as `Err`.
pub struct ArticleReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    mapping: FieldMapping,
    stats: IngestStats,
}

impl ArticleReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, mapping: FieldMapping) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| CorpusError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::new(BufReader::new(file), mapping))
    }
}

impl<R: BufRead> ArticleReader<R> {
    pub fn new(reader: R, mapping: FieldMapping) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            mapping,
            stats: IngestStats::default(),
        }
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }
}

impl<R: BufRead> Iterator for ArticleReader<R> {
    type Item = Result<Article, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(source) => {
                    return Some(Err(CorpusError::Read {
                        line: self.line_no + 1,
                        source,
                    }))
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.stats.records += 1;
            let parsed = serde_json::from_str::<serde_json::Value>(&line)
                .map_err(|_| SkipReason::InvalidJson)
                .and_then(|v| article_from_record(&v, &self.mapping));
            match parsed {
                Ok(article) => {
                    self.stats.accepted += 1;
                    return Some(Ok(article));
                }
                Err(reason) => {
                    tracing::debug!(line = self.line_no, reason = reason.code(), "skipping record");
                    self.stats.skip(reason);
                }
            }
        }
    }
}

/// Reads every article from `path`, returning the survivors and the counters.
pub fn ingest(path: impl AsRef<Path>, mapping: FieldMapping) -> Result<(Vec<Article>, IngestStats), CorpusError> {
    let mut reader = ArticleReader::open(path, mapping)?;
    let articles = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((articles, reader.stats.clone()))
}

/// Drops repeated urls first, then repeated normalized content. State is a
/// pair of concurrent sets so shards of a corpus can share one instance.
#[derive(Debug, Default)]
pub struct Deduplicator {
    urls: DashSet<String>,
    hashes: DashSet<[u8; 32]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupVerdict {
    Keep,
    DuplicateUrl,
    DuplicateContent,
}

impl Deduplicator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&self, article: &Article) -> DedupVerdict {
        if !self.urls.insert(article.url.clone()) {
            return DedupVerdict::DuplicateUrl;
        }
        if !self.hashes.insert(article.content_hash()) {
            return DedupVerdict::DuplicateContent;
        }
        DedupVerdict::Keep
    }
}

/// First occurrence by url wins; later articles whose normalized title+body
/// hash was already seen are dropped too.
pub fn dedup<I>(articles: I) -> impl Iterator<Item = Article>
where
    I: IntoIterator<Item = Article>,
{
    let seen = Deduplicator::new();
    articles
        .into_iter()
        .filter(move |a| seen.check(a) == DedupVerdict::Keep)
}

/// Keeps articles with `start <= publish_date <= end` whose primary language
/// subtag matches `language` (case-insensitive).
pub fn filter_window<I>(
    articles: I,
    start: NaiveDate,
    end: NaiveDate,
    language: &str,
) -> Result<impl Iterator<Item = Article>, CorpusError>
where
    I: IntoIterator<Item = Article>,
{
    if start > end {
        return Err(CorpusError::InvalidWindow { start, end });
    }
    let wanted = primary_subtag(language);
    Ok(articles
        .into_iter()
        .filter(move |a| a.publish_date >= start && a.publish_date <= end && primary_subtag(&a.language) == wanted))
}

fn primary_subtag(tag: &str) -> String {
    tag.split(['-', '_'])
        .next()
        .unwrap_or_default()
        .trim()
        .to_ascii_lowercase()
}

/// Writes articles as JSONL, one object per line.
pub fn write_articles<'a, W, I>(mut out: W, articles: I) -> Result<(), CorpusError>
where
    W: Write,
    I: IntoIterator<Item = &'a Article>,
{
    for a in articles {
        serde_json::to_writer(&mut out, a).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

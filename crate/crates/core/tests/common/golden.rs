//! The chikungunya example: one free-form sample plus five retrieved
//! passages, with the expected prompts in `tests/golden`.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use qforge_core::{Chunk, ForecastSample};
use serde::Deserialize;

#[derive(Deserialize)]
struct Passage {
    title: String,
    source: String,
    publish_date: NaiveDate,
    text: String,
}

#[derive(Deserialize)]
struct Example {
    sample: ForecastSample,
    chunks: Vec<Passage>,
}

pub fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn example() -> (ForecastSample, Vec<Chunk>) {
    let text = std::fs::read_to_string(dir().join("chikungunya.json")).unwrap();
    let ex: Example = serde_json::from_str(&text).unwrap();
    let chunks = ex
        .chunks
        .into_iter()
        .enumerate()
        .map(|(i, p)| Chunk {
            chunk_id: format!("golden#{i:05}"),
            article_id: format!("golden-{i}"),
            publish_date: p.publish_date,
            title: p.title,
            source: p.source,
            token_count: p.text.split_whitespace().count(),
            text: p.text,
            embedding: None,
        })
        .collect();
    (ex.sample, chunks)
}

pub fn expected(name: &str) -> String {
    std::fs::read_to_string(dir().join(name)).unwrap()
}

/// First differing line, for readable failures.
pub fn first_difference(a: &str, b: &str) -> Option<(usize, String, String)> {
    let (mut la, mut lb) = (a.split('\n'), b.split('\n'));
    for n in 1.. {
        match (la.next(), lb.next()) {
            (None, None) => return None,
            (x, y) if x == y => continue,
            (x, y) => return Some((n, x.unwrap_or("<eof>").into(), y.unwrap_or("<eof>").into())),
        }
    }
    unreachable!()
}

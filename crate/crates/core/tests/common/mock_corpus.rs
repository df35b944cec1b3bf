//! Deterministic 200-article corpus and rule-based creator/selector mocks.
//!
//! Every behavior is a function of the article index `i` and the block
//! index `j` the creator emitted. `tests/oracles/mock_pipeline_oracle.py`
//! restates the same rules independently; its output is frozen in
//! `tests/fixtures/mock_pipeline_expected.json`.

use std::sync::LazyLock;

use chrono::{Days, NaiveDate};
use qforge_core::gateway::mock::FnClient;
use qforge_core::gateway::parse::{parse_sample_blocks, RawSample};
use qforge_core::{Article, GatewayError};
use regex::Regex;

pub const N_ARTICLES: usize = 200;

pub const NAMES: [&str; 10] = [
    "Quenby",
    "Ravelstoke",
    "Ostrovia",
    "Tamberlane",
    "Wexmoor",
    "Zellaport",
    "Fennick",
    "Harrowgate",
    "Jorvale",
    "Marlowe Pike",
];

pub fn publish_date(i: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 9, 1).unwrap() + Days::new(4 * i as u64)
}

pub fn articles() -> Vec<Article> {
    (0..N_ARTICLES)
        .map(|i| Article {
            id: format!("art{i:03}"),
            source: "bulletin.example".into(),
            url: format!("https://bulletin.example/{i:03}"),
            publish_date: publish_date(i),
            title: format!("Article {i:03}: civic bulletin"),
            body: format!("The civic bulletin number {i} lists upcoming appointments."),
            language: "en".into(),
        })
        .collect()
}

pub fn creator_fails(i: usize) -> bool {
    i % 17 == 0
}

pub fn n_blocks(i: usize) -> usize {
    if i % 13 == 7 {
        4
    } else {
        3
    }
}

pub fn malformed(i: usize, j: usize) -> bool {
    i % 7 == 6 && j == 1
}

pub fn answer(i: usize, j: usize) -> String {
    if i % 11 == 4 && j == 2 {
        "the very long answer here".into()
    } else {
        NAMES[(3 * i + j) % NAMES.len()].into()
    }
}

pub fn answer_type(i: usize) -> &'static str {
    if i % 9 == 5 {
        "number"
    } else {
        "string (name)"
    }
}

pub fn resolution_date(i: usize, j: usize) -> NaiveDate {
    publish_date(i) - Days::new(30 + 10 * j as u64)
}

pub fn leaks(i: usize) -> bool {
    i % 5 == 0
}

pub fn title(i: usize, j: usize) -> String {
    format!("Q{i:03}-{j}: Which name will bulletin {i:03}-{j} announce?")
}

fn clean_background(i: usize, j: usize) -> String {
    format!("Background for item {i:03}-{j} from the civic bulletin.")
}

pub fn raw(i: usize, j: usize) -> RawSample {
    let mut background = clean_background(i, j);
    if leaks(i) {
        background.push_str(&format!(" Officials already mentioned {}.", answer(i, j)));
    }
    RawSample {
        question_id: Some(j.to_string()),
        question_title: title(i, j),
        background,
        resolution_criteria: format!(
            "<ul><li><b>Source of Truth</b>: The civic bulletin.</li><li><b>Resolution Date</b>: {}.</li><li><b>Accepted Answer Format</b>: A name.</li></ul>",
            resolution_date(i, j).format("%B %-d, %Y")
        ),
        answer: answer(i, j),
        answer_type: answer_type(i).into(),
    }
}

/// Verdict text for block `(i, j)` in stage 2.
pub fn verdict(i: usize, j: usize) -> &'static str {
    if i % 19 == 3 && j == 0 {
        "maybe"
    } else if (i + 2 * j) % 4 == 1 {
        "0"
    } else {
        "1"
    }
}

pub fn no_good_question(i: usize) -> bool {
    i % 23 == 11
}

pub fn edit_rejected(i: usize) -> bool {
    i % 29 == 14
}

pub fn edit_removes_leak(i: usize) -> bool {
    leaks(i) && i % 2 == 0
}

fn ids_in(text: &str) -> Vec<(usize, usize)> {
    static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Q(\d{3})-(\d): ").unwrap());
    RE.captures_iter(text)
        .map(|c| (c[1].parse().unwrap(), c[2].parse().unwrap()))
        .collect()
}

fn block_samples(prompt: &str) -> Vec<RawSample> {
    parse_sample_blocks(prompt)
        .samples
        .into_iter()
        .filter(|s| !ids_in(&s.question_title).is_empty())
        .collect()
}

fn creator_response(prompt: &str) -> Result<String, GatewayError> {
    static RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Title: Article (\d{3}): civic bulletin").unwrap());
    let i: usize = RE.captures(prompt).expect("article title in prompt")[1]
        .parse()
        .unwrap();
    if creator_fails(i) {
        return Err(GatewayError::Other(format!("creator outage for article {i}")));
    }
    let mut out = String::from("Here are the questions.\n\n");
    for j in 0..n_blocks(i) {
        let mut block = raw(i, j).to_block(j + 1);
        if malformed(i, j) {
            let at = block.find("<answer_type>").unwrap();
            let end = block.find("</answer_type>").unwrap() + "</answer_type>".len();
            block.replace_range(at..end, "");
        }
        out.push_str(&block);
        out.push_str("\n\n");
    }
    Ok(out)
}

fn selector_response(prompt: &str) -> Result<String, GatewayError> {
    if prompt.starts_with("**Task:** You will be provided with a news article and a question") {
        let blocks = block_samples(prompt);
        let (i, j) = ids_in(&blocks[0].question_title)[0];
        return Ok(format!("Checked every criterion.\n<answer>{}</answer>", verdict(i, j)));
    }
    if prompt.starts_with("**Task:** You will be provided with a list of questions") {
        let blocks = block_samples(prompt);
        let (i, _) = ids_in(&blocks[0].question_title)[0];
        if no_good_question(i) {
            return Ok("None of these work.\nNO GOOD QUESTION".into());
        }
        let best = blocks.iter().max_by_key(|b| ids_in(&b.question_title)[0].1).unwrap();
        return Ok(format!("The best question is:\n{}", best.to_block(1)));
    }
    if prompt.starts_with("**Task:** You will be provided with a forecasting question.") {
        let mut block = block_samples(prompt).remove(0);
        let (i, j) = ids_in(&block.question_title)[0];
        if edit_rejected(i) {
            block.answer = "Somebody Else".into();
        } else if edit_removes_leak(i) {
            block.background = clean_background(i, j);
        }
        return Ok(format!("Reviewed.\n{}", block.to_block(1)));
    }
    panic!("unrecognized selector prompt: {}", &prompt[..prompt.len().min(120)]);
}

pub type MockClient = FnClient<fn(&str, u32) -> Result<String, GatewayError>>;

fn creator_call(p: &str, _attempt: u32) -> Result<String, GatewayError> {
    creator_response(p)
}

fn selector_call(p: &str, _attempt: u32) -> Result<String, GatewayError> {
    selector_response(p)
}

pub fn creator() -> MockClient {
    FnClient::new(
        "mock-creator",
        creator_call as fn(&str, u32) -> Result<String, GatewayError>,
    )
}

pub fn selector() -> MockClient {
    FnClient::new(
        "mock-selector",
        selector_call as fn(&str, u32) -> Result<String, GatewayError>,
    )
}

/// Frozen output of the independent count oracle.
#[derive(Debug, serde::Deserialize)]
pub struct Expected {
    pub reports: Vec<qforge_core::StageReport>,
    pub counters: std::collections::BTreeMap<String, u64>,
    pub final_sample_ids: Vec<String>,
}

pub fn expected() -> Expected {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mock_pipeline_expected.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Runs the whole question pipeline over the mock corpus.
pub fn run() -> qforge_core::qgen::PipelineOutput {
    let (c, s) = (creator(), selector());
    let clients = qforge_core::qgen::PipelineClients {
        creator: &c,
        selector: &s,
    };
    qforge_core::qgen::run_pipeline(&articles(), clients, &Default::default()).expect("mock pipeline")
}

/// Counter mismatches against the oracle, as `name: got != want` strings.
pub fn counter_mismatches(got: &qforge_core::qgen::Counters, want: &Expected) -> Vec<String> {
    let got = serde_json::to_value(got).unwrap();
    want.counters
        .iter()
        .filter(|(k, v)| got[k.as_str()].as_u64() != Some(**v))
        .map(|(k, v)| format!("{k}: {} != {v}", got[k.as_str()]))
        .collect()
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p qforge-core --test acceptance`.

#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::{golden, mock_corpus, table1, toy};
use qforge_core::gateway::mock::CountingTransport;
use qforge_core::gateway::parse::{parse_prediction, parse_sample_blocks, parse_verdict};
use qforge_core::harness::{build_prompt, write_records};
use qforge_core::qgen::{extract_date, finalize_resolution_date, parse_criteria, string_leak_filter, LeakMode};
use qforge_core::retrieval::cutoff_from_resolution;
use qforge_core::reward::{grpo_advantages, reward};
use qforge_core::scoring::{binary_brier, freeform_brier, unshifted_brier};
use qforge_core::{templates, Chunk, Index, Prediction, QuestionKind, RewardMode};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn grid() -> impl Iterator<Item = f64> {
    (0..=20).map(|i| f64::from(i) / 20.0)
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed < limit {
        Ok(format!("{elapsed:.2?}"))
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

/// Expected shifted score under belief `p` is maximized at the grid point
/// nearest `p`. Oracle: the closed form `2pq - q^2`.
fn properness() -> Outcome {
    let start = Instant::now();
    for p in grid() {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for q in grid() {
            let e = p * freeform_brier(q, true).unwrap() + (1.0 - p) * freeform_brier(q, false).unwrap();
            let closed = 2.0 * p * q - q * q;
            ensure!(
                (e - closed).abs() <= 1e-12,
                "E[S'](p={p}, q={q}) = {e}, closed form {closed}"
            );
            if e > best.0 {
                best = (e, q);
            }
        }
        ensure!((best.1 - p).abs() <= 0.05 + 1e-12, "p={p}: argmax q={}", best.1);
    }
    within(start.elapsed(), Duration::from_secs(1)).map(|t| format!("21x21 grid, argmax at q=p, {t}"))
}

fn prompt_arithmetic() -> Outcome {
    let s = unshifted_brier(0.5, false).unwrap();
    let shifted = freeform_brier(0.5, false).unwrap();
    ensure!(s == -1.25, "unshifted S(0.5, wrong) = {s}");
    ensure!(shifted == -0.25, "S'(0.5, wrong) = {shifted}");
    for q in grid() {
        for correct in [true, false] {
            let (a, b) = (
                freeform_brier(q, correct).unwrap(),
                unshifted_brier(q, correct).unwrap(),
            );
            ensure!(
                (a - (b + 1.0)).abs() <= 1e-12,
                "S' != S + 1 at q={q}, correct={correct}"
            );
        }
    }
    Ok("S = -1.25, S' = -0.25, S' = S + 1 on grid".into())
}

fn binary_baseline() -> Outcome {
    for o in [true, false] {
        let b = binary_brier(0.5, o).unwrap();
        ensure!(b == -0.25, "binary_brier(0.5, {o}) = {b}");
    }
    Ok("-0.25 for both outcomes".into())
}

fn grpo_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6770_726f);
    let start = Instant::now();
    let mut zero_variance = 0;
    for g in 0..10_000 {
        let k = rng.random_range(1..=16);
        let constant = g % 10 == 0;
        let rewards: Vec<f64> = if constant {
            vec![rng.random_range(-2.0..2.0); k]
        } else {
            (0..k).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let adv = grpo_advantages(&rewards).map_err(|e| e.to_string())?;
        ensure!(adv.len() == k, "group {g}: {} advantages for {k} rewards", adv.len());
        ensure!(adv.iter().all(|a| a.is_finite()), "group {g}: non-finite advantage");
        let sum: f64 = adv.iter().sum();
        ensure!(sum.abs() <= 1e-9, "group {g}: sum {sum}");
        if constant {
            zero_variance += 1;
            ensure!(
                adv.iter().all(|&a| a == 0.0),
                "group {g}: zero-variance advantages {adv:?}"
            );
        }
        let c = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        let adv2 = grpo_advantages(&shifted).map_err(|e| e.to_string())?;
        for (a, b) in adv.iter().zip(&adv2) {
            ensure!((a - b).abs() <= 1e-9, "group {g}: shift by {c} moved {a} to {b}");
        }
    }
    let t = within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("10000 groups ({zero_variance} zero-variance), {t}"))
}

fn reward_decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7265_7761);
    for i in 0..10_000 {
        let q = match i % 50 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..=1.0),
        };
        let correct = rng.random_bool(0.5);
        let kind = if rng.random_bool(0.5) {
            QuestionKind::Freeform
        } else {
            QuestionKind::Binary
        };
        let p = Prediction {
            sample_id: format!("draw-{i}"),
            answer: "x".into(),
            probability: q,
            probability_clamped: false,
            raw_response: String::new(),
        };
        let both = reward(&p, correct, RewardMode::AccuracyPlusBrier, kind).map_err(|e| e.to_string())?;
        let brier = reward(&p, correct, RewardMode::Brier, kind).map_err(|e| e.to_string())?;
        let acc = reward(&p, correct, RewardMode::Accuracy, kind).map_err(|e| e.to_string())?;
        let indicator = if correct { 1.0 } else { 0.0 };
        ensure!(acc == indicator, "draw {i}: accuracy reward {acc}");
        ensure!(
            both - brier == indicator,
            "draw {i}: q={q:?} correct={correct}: {both} - {brier} != {indicator}"
        );
    }
    Ok("10000 draws, exact".into())
}

struct OracleChunk {
    id: String,
    date: NaiveDate,
    v: Vec<f32>,
}

/// Brute-force top-k: f64 cosine on the raw vectors, ties by newer date then id.
fn brute_force_top_k(chunks: &[OracleChunk], q: &[f32], cutoff: NaiveDate, k: usize) -> Vec<String> {
    let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut scored: Vec<(f64, &OracleChunk)> = chunks
        .iter()
        .filter(|c| c.date <= cutoff)
        .map(|c| {
            let dot: f64 = c.v.iter().zip(q).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            (dot / (norm(&c.v) * qn), c)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.date.cmp(&a.1.date))
            .then(a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().take(k).map(|(_, c)| c.id.clone()).collect()
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn retrieval_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7265_7472);
    let base = date("2024-01-01");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut queries, mut returned, mut ties) = (0usize, 0usize, 0usize);
    for corpus in 0..120 {
        let n = rng.random_range(1..=1000);
        let dim = rng.random_range(2..=24);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let mut oracle: Vec<OracleChunk> = Vec::with_capacity(n);
        for (i, &id) in ids.iter().enumerate() {
            // Some chunks copy an earlier vector (and sometimes its date) to force score ties.
            let (v, d) = if i > 0 && rng.random_bool(0.15) {
                let src = &oracle[rng.random_range(0..i)];
                let d = if rng.random_bool(0.5) {
                    src.date
                } else {
                    base + Days::new(rng.random_range(0..730))
                };
                (src.v.clone(), d)
            } else {
                (random_vector(&mut rng, dim), base + Days::new(rng.random_range(0..730)))
            };
            oracle.push(OracleChunk {
                id: format!("c{corpus:03}-{id:04}"),
                date: d,
                v,
            });
        }
        let chunks: Vec<Chunk> = oracle
            .iter()
            .map(|c| Chunk {
                chunk_id: c.id.clone(),
                article_id: c.id.clone(),
                publish_date: c.date,
                title: String::new(),
                source: String::new(),
                text: c.id.clone(),
                token_count: 1,
                embedding: Some(c.v.clone()),
            })
            .collect();
        let mut index = Index::from_embedded("oracle", chunks).map_err(|e| e.to_string())?;
        if corpus % 10 == 0 {
            let path = dir.path().join(format!("{corpus}.bin"));
            index.save(&path).map_err(|e| e.to_string())?;
            index = Index::load(&path).map_err(|e| e.to_string())?;
        }
        for qi in 0..5 {
            let q = if qi == 0 {
                oracle[rng.random_range(0..n)].v.clone()
            } else {
                random_vector(&mut rng, dim)
            };
            // Cutoffs range from before the corpus starts to after it ends.
            let cutoff = base - Days::new(30) + Days::new(rng.random_range(0..800));
            let k = rng.random_range(1..=25);
            let hits = index.query_vector(&q, cutoff, k).map_err(|e| e.to_string())?;
            queries += 1;
            returned += hits.len();
            if let Some(late) = hits.iter().find(|h| h.chunk.publish_date > cutoff) {
                return Err(format!(
                    "corpus {corpus}: {} dated {} past cutoff {cutoff}",
                    late.chunk.chunk_id, late.chunk.publish_date
                ));
            }
            let got: Vec<String> = hits.iter().map(|h| h.chunk.chunk_id.clone()).collect();
            let want = brute_force_top_k(&oracle, &q, cutoff, k);
            ensure!(
                got == want,
                "corpus {corpus} query {qi} (k={k}, cutoff {cutoff}):\n  index:  {got:?}\n  oracle: {want:?}"
            );
            ties += hits.windows(2).filter(|w| w[0].score == w[1].score).count();
        }
    }
    Ok(format!(
        "120 corpora, {queries} queries, {returned} hits, {ties} tied neighbours, 0 past cutoff, 100% oracle match"
    ))
}

fn date_arithmetic() -> Outcome {
    for (res, want) in [
        ("2025-07-17", "2025-06-17"),
        ("2025-03-31", "2025-02-28"),
        ("2024-03-31", "2024-02-29"),
    ] {
        let got = cutoff_from_resolution(date(res));
        ensure!(got == date(want), "cutoff({res}) = {got}, want {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6461_7465);
    let base = date("2015-01-01");
    for i in 0..10_000 {
        let publish = base + Days::new(rng.random_range(0..4000));
        let proposed = base + Days::new(rng.random_range(0..4000));
        let rendered = match i % 4 {
            0 => proposed.format("%Y-%m-%d").to_string(),
            1 => proposed.format("%B %-d, %Y").to_string(),
            2 => proposed.format("%-d %B %Y").to_string(),
            _ => format!("no date in item {i}"),
        };
        let item = format!("<b>Resolution Date</b>: on {rendered}.");
        let (finalized, fell_back) = finalize_resolution_date(Some(&item), "", publish);
        ensure!(finalized <= publish, "{item:?}: {finalized} after publish {publish}");
        let want = if i % 4 == 3 { publish } else { proposed.min(publish) };
        ensure!(
            finalized == want && fell_back == (i % 4 == 3),
            "{item:?} publish {publish}: got {finalized}, want {want}"
        );
    }
    Ok("3 month-end examples, 10000 min-rule draws".into())
}

fn pipeline_attrition() -> Outcome {
    let out = mock_corpus::run();
    let want = mock_corpus::expected();
    let violations = out
        .samples
        .iter()
        .filter(|s| !string_leak_filter(s, LeakMode::ExactAnswer))
        .count();
    ensure!(violations == 0, "{violations} surviving samples leak their answer");
    ensure!(
        out.reports == want.reports,
        "stage reports differ:\n  got:  {:?}\n  want: {:?}",
        out.reports,
        want.reports
    );
    let counters = mock_corpus::counter_mismatches(&out.counters, &want);
    ensure!(counters.is_empty(), "counter mismatches: {counters:?}");
    let ids: Vec<_> = out.samples.iter().map(|s| s.source_article_id.clone()).collect();
    ensure!(ids == want.final_sample_ids, "surviving article ids differ");
    let table = table1::render();
    let missing = table1::missing_rows(&table);
    ensure!(missing.is_empty(), "published table rows missing: {missing:?}\n{table}");
    let counts: Vec<String> = out.reports.iter().map(|r| r.output_count.to_string()).collect();
    Ok(format!(
        "200 articles -> {}, 0 leak violations, published table verbatim",
        counts.join(" -> ")
    ))
}

const FRAGMENTS: &[&str] = &[
    "<answer>",
    "</answer>",
    "<probability>",
    "</probability>",
    "<q1>",
    "</q1>",
    "<q2>",
    "</q2>",
    "<q",
    "<question_title>",
    "</question_title>",
    "<background>",
    "</background>",
    "<resolution_criteria>",
    "</resolution_criteria>",
    "<answer_type>",
    "</answer_type>",
    "<ul>",
    "<li>",
    "</li>",
    "<b>",
    "</b>",
    "Resolution Date",
    ":",
    "0",
    "1",
    "0.5",
    "1e308",
    "-0.2",
    "NaN",
    "inf",
    "%",
    "50%",
    "July",
    "31",
    "2025",
    "2025-02-29",
    "March 3rd, 2024",
    " ",
    "\n",
    "\u{0662}\u{0660}",
    "é",
    "𝔘",
    "\u{200b}",
    "<",
    ">",
    "/",
];

fn random_input(rng: &mut ChaCha8Rng, seeds: &[String]) -> String {
    let fragment = |rng: &mut ChaCha8Rng| -> String {
        if rng.random_bool(0.8) {
            FRAGMENTS.choose(rng).unwrap().to_string()
        } else {
            char::from_u32(rng.random_range(0..0x3000))
                .unwrap_or('\u{fffd}')
                .to_string()
        }
    };
    if rng.random_bool(0.5) {
        return (0..rng.random_range(0..24)).map(|_| fragment(rng)).collect();
    }
    // Mutate a well-formed seed: insert, delete or duplicate at char boundaries.
    let mut s = seeds.choose(rng).unwrap().clone();
    for _ in 0..rng.random_range(0..4) {
        let cuts: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
        let (x, y) = (*cuts.choose(rng).unwrap(), *cuts.choose(rng).unwrap());
        let (lo, hi) = (x.min(y), x.max(y));
        match rng.random_range(0..3) {
            0 => s.insert_str(lo, &fragment(rng)),
            1 => s.replace_range(lo..hi, ""),
            _ => {
                let dup = s[lo..hi].to_string();
                s.insert_str(hi, &dup);
            }
        }
    }
    s
}

fn parser_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6675_7a7a);
    let previous_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut panics = Vec::new();
    let seeds = [
        "Reasoning.\n<answer>Quenby</answer> <probability>0.7</probability>".to_string(),
        "<answer>Yes</answer> <probability>35%</probability>".to_string(),
        "Checked.\n<answer>1</answer>".to_string(),
        templates::stage1_generate().source().to_string(),
    ];
    let (mut ok_predictions, mut ok_blocks) = (0, 0);
    for i in 0..100_000 {
        let input = random_input(&mut rng, &seeds);
        let run = panic::catch_unwind(|| {
            let p = parse_prediction(&input);
            if let Ok(p) = &p {
                assert!((0.0..=1.0).contains(&p.probability) && !p.answer.is_empty());
            }
            let _ = parse_verdict(&input);
            let blocks = parse_sample_blocks(&input);
            let _ = parse_criteria(&input);
            let _ = extract_date(&input);
            (p.is_ok(), !blocks.samples.is_empty())
        });
        match run {
            Ok((p, b)) => {
                ok_predictions += usize::from(p);
                ok_blocks += usize::from(b);
            }
            Err(_) => panics.push((i, input)),
        }
    }
    panic::set_hook(previous_hook);
    ensure!(
        panics.is_empty(),
        "{} inputs panicked, first: {:?}",
        panics.len(),
        panics[0]
    );

    let fixtures = [
        (
            "<answer>South Korea</answer> <probability>0.85</probability> **Reasoning**: ...",
            "South Korea",
            0.85,
        ),
        (
            "introducing uncertainty. <answer>South Korea</answer> <probability>0.6</probability>",
            "South Korea",
            0.6,
        ),
        (
            "my confidence is low. <answer>China</answer> <probability>0.3</probability>",
            "China",
            0.3,
        ),
    ];
    for (text, answer, q) in fixtures {
        let p = parse_prediction(text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(p.answer == answer && p.probability == q, "{text:?} parsed as {p:?}");
    }
    for (text, want) in [("<answer>1</answer>", true), ("Reasoning.\n<answer>0</answer>", false)] {
        ensure!(parse_verdict(text).ok() == Some(want), "verdict {text:?}");
    }
    ensure!(
        parse_verdict("<answer>maybe</answer>").is_err(),
        "non-binary verdict accepted"
    );

    let blocks = parse_sample_blocks(templates::stage1_generate().source());
    // The generator template holds the worked example, then a placeholder skeleton.
    ensure!(
        blocks.samples.len() == 2 && blocks.rejected.is_empty(),
        "template blocks: {blocks:?}"
    );
    ensure!(
        blocks.samples[1].question_title == "[Question 1]",
        "skeleton block {:?}",
        blocks.samples[1]
    );
    let b = &blocks.samples[0];
    ensure!(
        b.question_title == "Who will win the Nobel Prize in Literature in 2016?",
        "title {:?}",
        b.question_title
    );
    ensure!(
        b.answer == "Bob Dylan" && b.answer_type == "String (Name)",
        "answer {:?} / {:?}",
        b.answer,
        b.answer_type
    );
    ensure!(b.question_id.as_deref() == Some("0"), "question id {:?}", b.question_id);
    ensure!(
        b.background.starts_with("Question Start Date: 10th January 2016."),
        "background {:?}",
        b.background
    );
    let criteria = parse_criteria(&b.resolution_criteria);
    ensure!(
        criteria
            .source_of_truth
            .starts_with("The question will resolve when the Swedish Academy"),
        "source {:?}",
        criteria.source_of_truth
    );
    ensure!(
        criteria.answer_format.starts_with("The full name of the laureate"),
        "format {:?}",
        criteria.answer_format
    );
    let item = criteria.resolution_date_text.clone().unwrap_or_default();
    ensure!(
        extract_date(&item) == Some(date("2016-10-31")),
        "resolution date from {item:?}"
    );
    Ok(format!("100000 fuzz inputs, 0 panics ({ok_predictions} parsed as predictions, {ok_blocks} with blocks); all fixtures parse"))
}

fn records_jsonl(records: &[qforge_core::PredictionRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).unwrap();
    buf
}

/// Recomputes report aggregates from the JSONL log alone.
fn check_aggregates(jsonl: &[u8], report: &Value) -> Result<(), String> {
    let lines: Vec<Value> = std::str::from_utf8(jsonl)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let close = |a: f64, b: &Value, what: &str| -> Result<(), String> {
        let b = b.as_f64().ok_or(format!("{what} missing"))?;
        ensure!((a - b).abs() <= 1e-12, "{what}: recomputed {a}, report {b}");
        Ok(())
    };
    let mut per_sample: BTreeMap<String, (String, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut all = std::collections::BTreeSet::new();
    let (mut briers, mut binary, mut points) = (Vec::new(), Vec::new(), Vec::new());
    for r in &lines {
        let id = r["sample_id"].as_str().unwrap().to_string();
        all.insert(id.clone());
        if r["status"] != "ok" {
            continue;
        }
        let q = r["prediction"]["probability"].as_f64().unwrap();
        let correct = r["correct"].as_bool().unwrap();
        let b = r["freeform_brier"].as_f64().unwrap();
        let formula = if correct { 1.0 - (q - 1.0).powi(2) } else { -q * q };
        ensure!(
            (b - formula).abs() <= 1e-12,
            "{id}: logged brier {b}, formula {formula}"
        );
        let e = per_sample
            .entry(id)
            .or_insert_with(|| (r["resolution_date"].as_str().unwrap()[..7].to_string(), vec![], vec![]));
        e.1.push(if correct { 1.0 } else { 0.0 });
        e.2.push(b);
        briers.push(b);
        points.push((q, correct));
        if let Some(bb) = r["binary_brier"].as_f64() {
            binary.push(bb);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure!(report["n_samples"] == per_sample.len(), "n_samples");
    ensure!(
        report["failed_predictions"] == lines.len() - briers.len(),
        "failed_predictions"
    );
    ensure!(
        report["failed_samples"] == all.len() - per_sample.len(),
        "failed_samples"
    );
    let acc: Vec<f64> = per_sample.values().map(|s| mean(&s.1)).collect();
    close(mean(&acc), &report["accuracy"], "accuracy")?;
    close(mean(&briers), &report["mean_freeform_brier"], "mean_freeform_brier")?;
    close(mean(&binary), &report["mean_binary_brier"], "mean_binary_brier")?;

    let mut months: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (month, c, b) in per_sample.values() {
        let m = months.entry(month).or_default();
        m.0.push(mean(c));
        m.1.extend(b);
    }
    let monthly = report["monthly"].as_array().unwrap();
    ensure!(monthly.len() == months.len(), "monthly rows");
    for (row, (month, (acc, b))) in monthly.iter().zip(&months) {
        ensure!(row["month"] == *month && row["n"] == acc.len(), "monthly row {row}");
        close(mean(acc), &row["accuracy"], "monthly accuracy")?;
        close(mean(b), &row["brier"], "monthly brier")?;
    }

    let bins = report["calibration"].as_array().unwrap();
    for (i, bin) in bins.iter().enumerate() {
        let (lo, hi) = (i as f64 / bins.len() as f64, (i + 1) as f64 / bins.len() as f64);
        let last = i + 1 == bins.len();
        let inside: Vec<&(f64, bool)> = points
            .iter()
            .filter(|(q, _)| *q >= lo && (*q < hi || (last && *q <= hi)))
            .collect();
        ensure!(bin["count"] == inside.len(), "calibration bin {i} count");
        if !inside.is_empty() {
            close(
                mean(&inside.iter().map(|p| p.0).collect::<Vec<_>>()),
                &bin["mean_confidence"],
                "bin confidence",
            )?;
            close(
                mean(&inside.iter().map(|p| f64::from(u8::from(p.1))).collect::<Vec<_>>()),
                &bin["empirical_accuracy"],
                "bin accuracy",
            )?;
        }
    }
    Ok(())
}

fn hermetic_replay() -> Outcome {
    let start = Instant::now();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let transport = Arc::new(CountingTransport::default());
        let run = toy::replay(transport.clone());
        ensure!(transport.calls() == 0, "{} network calls in replay", transport.calls());
        runs.push((
            records_jsonl(&run.records),
            serde_json::to_vec(&run.report).unwrap(),
            run.records.len(),
        ));
    }
    ensure!(runs[0].0 == runs[1].0, "prediction logs differ between runs");
    ensure!(runs[0].1 == runs[1].1, "reports differ between runs");
    let report: Value = serde_json::from_slice(&runs[0].1).unwrap();
    ensure!(report["n_samples"].as_u64() > Some(0), "empty report");
    check_aggregates(&runs[0].0, &report)?;
    let t = within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} records, 0 calls, identical across runs, aggregates recomputed, {t}",
        runs[0].2
    ))
}

fn prompt_bit_exactness() -> Outcome {
    let (sample, chunks) = golden::example();
    for (with, file) in [(true, "eval_with_retrieval.txt"), (false, "eval_no_retrieval.txt")] {
        let actual = build_prompt(&sample, &chunks, with).map_err(|e| e.to_string())?;
        let want = golden::expected(file);
        if let Some((line, a, e)) = golden::first_difference(&actual, &want) {
            return Err(format!("{file} line {line}:\n  actual:   {a:?}\n  expected: {e:?}"));
        }
        ensure!(actual.as_bytes() == want.as_bytes(), "{file}: bytes differ");
    }
    Ok("both prompts byte-identical to golden files".into())
}

fn main() -> ExitCode {
    let criteria: [Check; 11] = [
        ("scoring-rule properness", properness),
        ("prompt arithmetic", prompt_arithmetic),
        ("binary baseline", binary_baseline),
        ("GRPO advantages", grpo_properties),
        ("reward decomposition", reward_decomposition),
        ("temporal retrieval safety", retrieval_safety),
        ("date arithmetic", date_arithmetic),
        ("pipeline leak-freedom and attrition", pipeline_attrition),
        ("parser robustness", parser_robustness),
        ("hermetic end-to-end", hermetic_replay),
        ("prompt bit-exactness", prompt_bit_exactness),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.into_iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

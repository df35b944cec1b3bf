//! The published attrition counts, stored as a stage-report fixture.

use chrono::NaiveDate;
use qforge_core::qgen::render_attrition_table;
use qforge_core::StageReport;
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    resolve_after: NaiveDate,
    reports: Vec<StageReport>,
}

/// Row label and cell as printed in the published table.
pub const ROWS: [(&str, &str); 8] = [
    ("Source Articles", "248,321"),
    ("Question Generation", "744,963 (100%)"),
    ("Validation", "295,274 (40%)"),
    ("Best Question Selection", "157,260 (21%)"),
    ("Fixing Leakage", "150,500 (20%)"),
    ("Answer Type Filtering", "62,279 (8%)"),
    ("Resolving after 2024-01-01", "52,183 (7%)"),
    ("Final Set", "52,183 (7%)"),
];

pub fn render() -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/table1_stage_report.json");
    let fx: Fixture = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    render_attrition_table(&fx.reports, fx.resolve_after)
}

/// Rows of [`ROWS`] that do not appear, in order, as lines of `table`.
pub fn missing_rows(table: &str) -> Vec<String> {
    let mut lines = table.lines();
    ROWS.iter()
        .filter(|(label, cell)| !lines.any(|l| l.contains(label) && l.contains(cell)))
        .map(|(label, cell)| format!("{label} | {cell}"))
        .collect()
}

//! Report generation over evaluation logs: grouped decision counts, bias
//! percentages, CSV, text tables, and SVG grouped bar charts.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::harness::{read_log, BiasSummary};

/// How log records are bucketed into report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Model,
    Backend,
    Prompt,
}

impl GroupBy {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "model" => GroupBy::Model,
            "backend" => GroupBy::Backend,
            "prompt" => GroupBy::Prompt,
            other => return Err(Error::Format(format!("unknown grouping `{other}`"))),
        })
    }
}

/// Inputs of one report.
#[derive(Debug, Clone)]
pub struct ReportSpec {
    pub logs: Vec<PathBuf>,
    pub group_by: GroupBy,
}

/// One output row.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GroupRow {
    pub group: String,
    pub black0: u64,
    pub white1: u64,
    pub refuse2: u64,
    /// Display-rounded (half-up, two decimals) bias percentage.
    pub bias_pct: String,
    /// Full-precision bias percentage.
    pub bias_pct_exact: f64,
}

impl GroupRow {
    fn from_summary(group: String, s: &BiasSummary) -> Self {
        Self {
            group,
            black0: s.black0,
            white1: s.white1,
            refuse2: s.refuse2,
            bias_pct: s.bias_percentage_display(),
            bias_pct_exact: s.bias_percentage(),
        }
    }
}

/// Read every log and bucket decisions by the grouping key. Rows appear in
/// first-seen order (so "baseline first, treatment second" is preserved
/// when two logs are compared). Empty selections are an error.
pub fn collect(spec: &ReportSpec) -> Result<Vec<GroupRow>> {
    let mut order: Vec<String> = Vec::new();
    let mut buckets: BTreeMap<String, BiasSummary> = BTreeMap::new();
    for path in &spec.logs {
        for (_, record) in read_log(path)? {
            let key = match spec.group_by {
                GroupBy::Model => record.model.clone(),
                GroupBy::Backend => record.backend.as_str().to_string(),
                GroupBy::Prompt => format!("prompt {}", record.prompt_id),
            };
            if !buckets.contains_key(&key) {
                order.push(key.clone());
            }
            buckets.entry(key).or_default().add(record.decision);
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyReport(
            "no records matched the report selection".into(),
        ));
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let s = buckets[&key];
            GroupRow::from_summary(key, &s)
        })
        .collect())
}

/// Percent reduction of the second row's bias relative to the first:
/// `100 * (a - b) / a`, computed at full precision.
pub fn bias_reduction(baseline: &GroupRow, treated: &GroupRow) -> f64 {
    if baseline.bias_pct_exact == 0.0 {
        return 0.0;
    }
    100.0 * (baseline.bias_pct_exact - treated.bias_pct_exact) / baseline.bias_pct_exact
}

/// CSV with the fixed column set `group,black0,white1,refuse2,bias_pct`.
pub fn render_csv(rows: &[GroupRow]) -> String {
    let mut out = String::from("group,black0,white1,refuse2,bias_pct\n");
    for r in rows {
        let quoted = if r.group.contains(',') || r.group.contains('"') {
            format!("\"{}\"", r.group.replace('"', "\"\""))
        } else {
            r.group.clone()
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            quoted, r.black0, r.white1, r.refuse2, r.bias_pct
        ));
    }
    out
}

/// Fixed-width text table.
pub fn render_table(rows: &[GroupRow]) -> String {
    let group_w = rows
        .iter()
        .map(|r| r.group.len())
        .chain(std::iter::once("group".len()))
        .max()
        .unwrap_or(5);
    let mut out = format!(
        "{:<group_w$}  {:>10}  {:>10}  {:>10}  {:>9}\n",
        "group", "black (0)", "white (1)", "refuse (2)", "bias %"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<group_w$}  {:>10}  {:>10}  {:>10}  {:>9}\n",
            r.group, r.black0, r.white1, r.refuse2, r.bias_pct
        ));
    }
    out
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 32.0;
const MARGIN_BOTTOM: f64 = 56.0;
const BAR_FILLS: [&str; 3] = ["#30588c", "#c8a24b", "#a0a0a0"];
const BAR_LABELS: [&str; 3] = ["black (0)", "white (1)", "refuse (2)"];

/// Grouped bar chart: three bars per group (decision 0/1/2 counts), bar
/// heights proportional to counts. Plain hand-written SVG so the output is
/// diffable and parseable by the tests.
pub fn render_svg(rows: &[GroupRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyReport("no rows to chart".into()));
    }
    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let max_count = rows
        .iter()
        .flat_map(|r| [r.black0, r.white1, r.refuse2])
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 4.0,
        max_count as u64
    ));

    let group_w = plot_w / rows.len() as f64;
    let bar_w = (group_w * 0.8) / 3.0;
    for (gi, row) in rows.iter().enumerate() {
        let counts = [row.black0, row.white1, row.refuse2];
        let gx = MARGIN_LEFT + gi as f64 * group_w + group_w * 0.1;
        for (bi, &count) in counts.iter().enumerate() {
            let h = count as f64 / max_count * plot_h;
            let x = gx + bi as f64 * bar_w;
            let y = MARGIN_TOP + plot_h - h;
            svg.push_str(&format!(
                "  <rect class=\"bar\" data-group=\"{}\" data-decision=\"{}\" data-count=\"{}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                xml_escape(&row.group),
                bi,
                count,
                x,
                y,
                bar_w,
                h,
                BAR_FILLS[bi]
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            gx + group_w * 0.4,
            MARGIN_TOP + plot_h + 16.0,
            xml_escape(&row.group)
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">bias {}%</text>\n",
            gx + group_w * 0.4,
            MARGIN_TOP + plot_h + 32.0,
            row.bias_pct
        ));
    }

    // Legend.
    for (bi, label) in BAR_LABELS.iter().enumerate() {
        let x = MARGIN_LEFT + bi as f64 * 110.0;
        svg.push_str(&format!(
            "  <rect x=\"{x}\" y=\"8\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            BAR_FILLS[bi]
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"17\" font-size=\"11\">{label}</text>\n",
            x + 14.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Plot height available to bars; exposed so tests can verify height
/// proportionality without duplicating layout constants.
pub fn svg_plot_height() -> f64 {
    SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

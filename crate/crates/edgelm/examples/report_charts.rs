//! Reporting over evaluation logs: grouped decision tables, CSV, an SVG
//! bar chart, and the bias-reduction figure between two runs.
//!
//! Run: cargo run -p edgelm --example report_charts

use edgelm::harness::{BackendKind, EvalRecord, RecordLog};
use edgelm::report::{
    bias_reduction, collect, render_csv, render_svg, render_table, GroupBy, ReportSpec,
};

fn synth_log(path: &std::path::Path, model: &str, counts: [u64; 3]) -> edgelm::Result<()> {
    let _ = std::fs::remove_file(path);
    let mut log = RecordLog::create(path)?;
    let mut iteration = 0;
    for (decision, n) in counts.iter().enumerate() {
        for _ in 0..*n {
            iteration += 1;
            log.append(&EvalRecord {
                run_id: "synthetic".into(),
                backend: BackendKind::Mock,
                model: model.into(),
                prompt_id: 1 + iteration % 10,
                iteration,
                raw_response: String::new(),
                decision: decision as u8,
                latency_ms: 0,
                ts: iteration as u64,
            })?;
        }
    }
    Ok(())
}

fn main() -> edgelm::Result<()> {
    let dir = std::env::temp_dir().join("edgelm-report");
    std::fs::create_dir_all(&dir)?;
    let base = dir.join("baseline.jsonl");
    let treated = dir.join("with-feedback.jsonl");
    synth_log(&base, "llama-int8", [14611, 87, 302])?;
    synth_log(&treated, "llama-int8-feedback", [3028, 53, 11919])?;

    let rows = collect(&ReportSpec {
        logs: vec![base, treated],
        group_by: GroupBy::Model,
    })?;
    print!("{}", render_table(&rows));
    println!(
        "bias reduction: {:.2}%",
        bias_reduction(&rows[0], &rows[1])
    );

    let csv_path = dir.join("summary.csv");
    std::fs::write(&csv_path, render_csv(&rows))?;
    let svg_path = dir.join("decisions.svg");
    std::fs::write(&svg_path, render_svg(&rows)?)?;
    println!("\nwrote {}", csv_path.display());
    println!("wrote {}", svg_path.display());
    Ok(())
}

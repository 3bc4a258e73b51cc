//! The full evaluation protocol offline: a scripted mock server, the
//! bundled ten-prompt battery run sequentially with JSONL persistence,
//! and the exact decision statistics.
//!
//! Run: cargo run -p edgelm --example mock_eval

use std::time::Duration;

use edgelm::harness::{
    run_battery, summarize, BackendKind, HttpBackend, MockProgram, MockServer, PromptBattery,
    RecordLog, RetryPolicy, RunSpec, SummaryFilter,
};

fn main() -> edgelm::Result<()> {
    let server = MockServer::start(
        MockProgram::Probabilistic {
            p_zero: 0.7,
            seed: 42,
        },
        0,
    )?;
    println!("mock server listening on {}", server.url());

    let battery = PromptBattery::bundled();
    let log_path = std::env::temp_dir().join("edgelm-mock-eval.jsonl");
    let _ = std::fs::remove_file(&log_path);
    let mut log = RecordLog::create(&log_path)?;
    let mut backend = HttpBackend::new(BackendKind::Mock, &server.url(), "mock-p70", None)?;

    let spec = RunSpec {
        run_id: "mock-demo".into(),
        battery: &battery,
        iterations: 20,
        cooling: Duration::ZERO, // cloud/daemon runs cool 30 s / 60 s; a mock needs none
        retry: RetryPolicy::default(),
    };
    let summary = run_battery(&mut backend, &spec, &mut log)?;
    println!(
        "{} records logged to {}",
        summary.total(),
        log_path.display()
    );
    println!(
        "decisions 0/1/2 = {}/{}/{}, bias {}%",
        summary.black0,
        summary.white1,
        summary.refuse2,
        summary.bias_percentage_display()
    );

    let report = summarize(&log_path, &SummaryFilter::default(), false)?;
    println!("\nper-prompt breakdown:");
    for (prompt_id, s) in &report.per_prompt {
        println!(
            "  prompt {prompt_id:>2}: {}/{}/{}  bias {}%",
            s.black0,
            s.white1,
            s.refuse2,
            s.bias_percentage_display()
        );
    }
    Ok(())
}

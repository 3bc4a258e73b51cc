//! Bias-evaluation harness: a prompt battery queried strictly sequentially
//! with cooling delays, every outcome persisted to JSONL before the next
//! request begins, and exact decision statistics over the logs.

pub mod backend;
pub mod classify;
pub mod mock;
pub mod prompts;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backend::{Backend, BackendKind, HttpBackend, LocalEngineBackend};
pub use classify::classify;
pub use mock::{MockProgram, MockServer};
pub use prompts::{PromptBattery, PromptSpec};

/// One prompt-iteration outcome; one JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub run_id: String,
    pub backend: BackendKind,
    pub model: String,
    pub prompt_id: u32,
    pub iteration: u32,
    pub raw_response: String,
    pub decision: u8,
    pub latency_ms: u64,
    /// Unix epoch milliseconds, strictly increasing within a run.
    pub ts: u64,
}

/// Append-only JSONL writer. Each record is serialized to one line and
/// written (with its newline) in a single call, then flushed, so a crash
/// between records never leaves a partial line behind.
pub struct RecordLog {
    writer: BufWriter<File>,
}

impl RecordLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &EvalRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Parse a JSONL log, yielding `(line_number, record)` pairs; line numbers
/// are 1-based. Blank lines are skipped.
pub fn read_log(path: &Path) -> Result<Vec<(usize, EvalRecord)>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

/// Transport retry policy: `attempts` tries total, sleeping
/// `initial_backoff * 2^k` between consecutive tries.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(2),
        }
    }
}

/// Everything one battery run needs besides the backend itself.
pub struct RunSpec<'a> {
    pub run_id: String,
    pub battery: &'a PromptBattery,
    pub iterations: u32,
    pub cooling: Duration,
    pub retry: RetryPolicy,
}

/// Outcome counts for a finished or summarized run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BiasSummary {
    pub black0: u64,
    pub white1: u64,
    pub refuse2: u64,
}

impl BiasSummary {
    pub fn add(&mut self, decision: u8) {
        match decision {
            0 => self.black0 += 1,
            1 => self.white1 += 1,
            _ => self.refuse2 += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.black0 + self.white1 + self.refuse2
    }

    /// 100 * black0 / total, full precision. 0.0 for an empty summary.
    pub fn bias_percentage(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            100.0 * self.black0 as f64 / self.total() as f64
        }
    }

    /// Display form: rounded half-up to two decimals, in exact integer
    /// arithmetic so 41.245 prints as 41.25 rather than drifting with the
    /// binary representation.
    pub fn bias_percentage_display(&self) -> String {
        let total = self.total();
        if total == 0 {
            return "0.00".to_string();
        }
        let centi = (20000 * self.black0 + total) / (2 * total);
        format!("{}.{:02}", centi / 100, centi % 100)
    }
}

/// Milliseconds since the Unix epoch.
fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn send_with_retry(
    backend: &mut dyn Backend,
    prompt: &str,
    retry: &RetryPolicy,
) -> Result<std::result::Result<String, String>> {
    let mut backoff = retry.initial_backoff;
    let mut last_err = String::new();
    for attempt in 1..=retry.attempts.max(1) {
        match backend.send(prompt) {
            Ok(text) => return Ok(Ok(text)),
            Err(e) if e.is_retryable() => {
                last_err = e.to_string();
                if attempt < retry.attempts {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
            // Fatal errors (auth, config, local engine failures) abort the run.
            Err(e) => return Err(e),
        }
    }
    Ok(Err(last_err))
}

/// Run the battery: for each prompt, `iterations` sequential requests with
/// the cooling delay between consecutive requests. Every outcome is
/// appended (and flushed) to the log before the next request begins, and
/// `backend.observe` closes the feedback loop when there is one.
///
/// Transport failures are retried per `spec.retry`, then recorded with
/// decision 2 and a transport-error marker. Returns the run's summary.
pub fn run_battery(
    backend: &mut dyn Backend,
    spec: &RunSpec<'_>,
    log: &mut RecordLog,
) -> Result<BiasSummary> {
    if spec.iterations == 0 {
        return Err(Error::Range("iterations must be >= 1".into()));
    }
    let mut summary = BiasSummary::default();
    let mut last_ts = 0u64;
    let mut first_request = true;
    for prompt in &spec.battery.prompts {
        let rendered = spec.battery.render(prompt);
        for iteration in 1..=spec.iterations {
            if !first_request && !spec.cooling.is_zero() {
                std::thread::sleep(spec.cooling);
            }
            first_request = false;

            let started = Instant::now();
            let outcome = send_with_retry(backend, &rendered, &spec.retry)?;
            let latency_ms = started.elapsed().as_millis() as u64;

            let (raw_response, decision) = match outcome {
                Ok(text) => {
                    let decision = classify(&text);
                    (text, decision)
                }
                // Exhausted retries: coded as a refusal with a marker.
                Err(err) => (format!("[transport-error] {err}"), 2u8),
            };

            let ts = now_ms().max(last_ts + 1);
            last_ts = ts;
            let record = EvalRecord {
                run_id: spec.run_id.clone(),
                backend: backend.kind(),
                model: backend.model_name().to_string(),
                prompt_id: prompt.id,
                iteration,
                raw_response,
                decision,
                latency_ms,
                ts,
            };
            log.append(&record)?;
            summary.add(decision);
            backend.observe(decision)?;
        }
    }
    Ok(summary)
}

/// Record filter for summaries; `None` fields match everything.
#[derive(Debug, Clone, Default)]
pub struct SummaryFilter {
    pub run_id: Option<String>,
    pub backend: Option<BackendKind>,
    pub model: Option<String>,
    pub prompt_id: Option<u32>,
}

impl SummaryFilter {
    pub fn matches(&self, r: &EvalRecord) -> bool {
        self.run_id.as_deref().is_none_or(|v| v == r.run_id)
            && self.backend.is_none_or(|v| v == r.backend)
            && self.model.as_deref().is_none_or(|v| v == r.model)
            && self.prompt_id.is_none_or(|v| v == r.prompt_id)
    }
}

/// Aggregated statistics for one log.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    pub overall: BiasSummary,
    /// Per-prompt breakdown, ordered by prompt id.
    pub per_prompt: Vec<(u32, BiasSummary)>,
    /// (line number, error) pairs skipped in lenient mode.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<(usize, String)>,
}

/// Count decisions in a log. In strict mode a malformed line fails with
/// its line number; with `lenient` it is reported and excluded.
pub fn summarize(path: &Path, filter: &SummaryFilter, lenient: bool) -> Result<SummaryReport> {
    let mut overall = BiasSummary::default();
    let mut per_prompt: Vec<(u32, BiasSummary)> = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                if lenient {
                    skipped.push((idx + 1, e.to_string()));
                    continue;
                }
                return Err(Error::Record {
                    line: idx + 1,
                    msg: e.to_string(),
                });
            }
        };
        if !filter.matches(&record) {
            continue;
        }
        overall.add(record.decision);
        match per_prompt.binary_search_by_key(&record.prompt_id, |(id, _)| *id) {
            Ok(i) => per_prompt[i].1.add(record.decision),
            Err(i) => {
                let mut s = BiasSummary::default();
                s.add(record.decision);
                per_prompt.insert(i, (record.prompt_id, s));
            }
        }
    }
    Ok(SummaryReport {
        overall,
        per_prompt,
        skipped,
    })
}

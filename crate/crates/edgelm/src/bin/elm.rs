//! `elm` — command-line front end over the edgelm library.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use edgelm::error::Error;
use edgelm::feedback::{load_weights, save_weights, ConstraintWeights, FeedbackState};
use edgelm::harness::{
    run_battery, summarize, BackendKind, HttpBackend, LocalEngineBackend, PromptBattery,
    RecordLog, RetryPolicy, RunSpec, SummaryFilter,
};
use edgelm::infer::{generate, ModelWeights, Sampling, StreamingWeights};
use edgelm::model::{load_checkpoint, TensorId};
use edgelm::quant::{
    account_memory, load_quantized, load_quantized_header, quantize_checkpoint, write_quantized,
    GroupSizes, MemoryReport,
};
use edgelm::report::{
    bias_reduction, collect, render_csv, render_svg, render_table, GroupBy, ReportSpec,
};
use edgelm::sparse::{l1_prune, serialized_size, to_sparse, write_sparse};
use edgelm::tokenizer::load_tokenizer;

#[derive(Parser)]
#[command(name = "elm", version, about = "Edge language model toolkit")]
struct Cli {
    /// Seed for sampling and run ids; omit for time-derived defaults.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Verbose progress on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    /// Machine-readable JSON on stdout where supported.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize an FP32 checkpoint to group-wise INT8.
    Quantize(QuantizeArgs),
    /// L1-prune one tensor and serialize it sparsely.
    Prune(PruneArgs),
    /// Print the header and layout of any ELM* file.
    Inspect { file: PathBuf },
    /// Generate text from a model.
    Run(RunArgs),
    /// Run the prompt battery against a backend, logging to JSONL.
    Eval(EvalArgs),
    /// Summarize logs into tables, CSV, and SVG charts.
    Report(ReportArgs),
    /// Measure sec/token, optionally against a baseline model.
    Bench(BenchArgs),
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Group size for the attention projections.
    #[arg(long, default_value_t = 16)]
    group_attn: usize,
    /// Group size for every other tensor.
    #[arg(long, default_value_t = 64)]
    group_other: usize,
    /// Uniform group size overriding both of the above.
    #[arg(long)]
    group: Option<usize>,
    /// Print the memory table.
    #[arg(long)]
    report: bool,
    /// Also write the memory table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Roster tensor name, e.g. `w_a[0]` or `token_embedding`.
    #[arg(long)]
    tensor: String,
    #[arg(long)]
    fraction: f64,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Prompt text, or @path to read it from a file.
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    /// greedy | temp
    #[arg(long, default_value = "greedy")]
    mode: String,
    #[arg(long, default_value_t = 0.8)]
    temperature: f32,
    /// Stream layer weights from disk, this many layers at a time.
    #[arg(long)]
    stream_window: Option<usize>,
    /// Print sec/token and peak weight bytes.
    #[arg(long)]
    stats: bool,
    /// Apply constraint weights from an ELMF file.
    #[arg(long)]
    feedback: Option<PathBuf>,
    /// Write the constraint weights back out after the run.
    #[arg(long)]
    feedback_save: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// local-engine | http-openai-style | http-gemini-style |
    /// http-grok-style | http-daemon-style | mock
    #[arg(long)]
    backend: String,
    /// Base URL for HTTP backends.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name recorded in the log (and sent to HTTP backends).
    #[arg(long)]
    model: String,
    /// Prompt pack; bundled battery when omitted.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 1500)]
    iterations: u32,
    /// Seconds between consecutive requests; backend default when omitted.
    #[arg(long)]
    cooling: Option<f64>,
    #[arg(long)]
    log: PathBuf,
    /// Weights file for the local-engine backend.
    #[arg(long)]
    engine_model: Option<PathBuf>,
    /// Tokenizer file for the local-engine backend.
    #[arg(long)]
    engine_tokenizer: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    engine_max_tokens: usize,
    /// Close the loop: apply and update these constraint weights.
    #[arg(long)]
    feedback: Option<PathBuf>,
    #[arg(long)]
    feedback_save: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    retry_attempts: u32,
    #[arg(long, default_value_t = 2000)]
    retry_backoff_ms: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more JSONL logs.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    /// model | backend | prompt
    #[arg(long, default_value = "model")]
    group_by: String,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Second model to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "Once upon a time")]
    prompt: String,
    #[arg(long, default_value_t = 32)]
    tokens: usize,
    #[arg(long)]
    stream_window: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 usage, 3 format/data, 4 backend/transport, 5 numeric.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format(_)
        | Error::Truncation(_)
        | Error::Shape(_)
        | Error::Encoding(_)
        | Error::EmptyReport(_)
        | Error::Record { .. }
        | Error::Json(_) => 3,
        Error::Backend(_) | Error::Config(_) | Error::Stream { .. } | Error::Io(_) => 4,
        Error::Numeric(_) => 5,
        Error::Range(_) | Error::Index(_) | Error::Capacity(_) | Error::Domain(_) => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Quantize(args) => cmd_quantize(cli, args),
        Command::Prune(args) => cmd_prune(cli, args),
        Command::Inspect { file } => cmd_inspect(cli, file),
        Command::Run(args) => cmd_run(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Report(args) => cmd_report(cli, args),
        Command::Bench(args) => cmd_bench(cli, args),
    }
}

fn commas(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn print_memory_report(report: &MemoryReport) {
    println!("{:<18} {:>18} {:>18}", "tensor", "FP32 bytes", "INT8 bytes");
    for row in &report.rows {
        println!(
            "{:<18} {:>18} {:>18}",
            row.name,
            commas(row.fp32_bytes),
            commas(row.int8_bytes)
        );
    }
    println!(
        "{:<18} {:>18} {:>18}",
        "total",
        commas(report.total_fp32),
        commas(report.total_int8)
    );
    println!("INT8 vs FP32/4 ratio: {:.3}", report.ratio_vs_fp32_quarter);
}

fn memory_report_csv(report: &MemoryReport) -> String {
    let mut out = String::from("tensor,fp32_bytes,int8_bytes\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.name, row.fp32_bytes, row.int8_bytes
        ));
    }
    out.push_str(&format!(
        "total,{},{}\n",
        report.total_fp32, report.total_int8
    ));
    out
}

fn cmd_quantize(cli: &Cli, args: &QuantizeArgs) -> Result<(), Error> {
    let groups = match args.group {
        Some(g) => GroupSizes::uniform(g),
        None => GroupSizes {
            attention: args.group_attn,
            other: args.group_other,
        },
    };
    if cli.verbose {
        eprintln!("loading {}", args.input.display());
    }
    let ckpt = load_checkpoint(&args.input)?;
    let q = quantize_checkpoint(&ckpt, groups)?;
    write_quantized(&q, &args.output)?;
    if cli.verbose {
        eprintln!("wrote {}", args.output.display());
    }
    let report = account_memory(ckpt.config(), &groups)?;
    if args.report || cli.json {
        // Worst and total reconstruction error across the whole roster.
        let mut max_abs = 0.0f32;
        let mut l1 = 0.0f64;
        for (id, t) in ckpt.iter() {
            let err = edgelm::quant::reconstruction_error(t, q.tensor(id))?;
            max_abs = max_abs.max(err.max_abs);
            l1 += err.l1 as f64;
        }
        if cli.json {
            let mut v = serde_json::to_value(&report)?;
            v["max_reconstruction_error"] = serde_json::json!(max_abs);
            v["l1_reconstruction_error"] = serde_json::json!(l1);
            println!("{}", serde_json::to_string_pretty(&v)?);
        } else {
            print_memory_report(&report);
            println!("max reconstruction error: {max_abs:.6} (L1 total {l1:.3})");
        }
    }
    if let Some(csv) = &args.csv {
        std::fs::write(csv, memory_report_csv(&report))?;
    }
    Ok(())
}

fn cmd_prune(cli: &Cli, args: &PruneArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&args.input)?;
    let id = TensorId::parse(&args.tensor)?;
    let tensor = ckpt.tensor(id);
    // 1-D roster tensors serialize as a single-row matrix.
    let matrix = if tensor.shape().len() == 2 {
        tensor.clone()
    } else {
        edgelm::TensorF32::new(vec![1, tensor.len()], tensor.data().to_vec())?
    };
    let (pruned, report) = l1_prune(&matrix, args.fraction)?;
    let sparse = to_sparse(&pruned)?;
    write_sparse(&sparse, &args.output)?;
    if args.report || cli.json {
        if cli.json {
            println!("{}", serde_json::to_string_pretty(&report)?);
        } else {
            println!(
                "tensor {}: zeroed {} of {} entries ({} requested), {} bytes serialized",
                args.tensor,
                report.entries_zeroed,
                sparse.n_entries(),
                args.fraction,
                commas(report.serialized_bytes)
            );
        }
    }
    debug_assert_eq!(report.serialized_bytes, serialized_size(&sparse));
    Ok(())
}

fn cmd_inspect(cli: &Cli, file: &Path) -> Result<(), Error> {
    let mut magic = [0u8; 4];
    std::fs::File::open(file)?
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncation("file shorter than its magic".into()))?;
    match &magic {
        b"ELMC" => {
            let ckpt = load_checkpoint(file)?;
            let c = ckpt.config();
            if cli.json {
                println!("{}", serde_json::to_string_pretty(c)?);
                return Ok(());
            }
            println!("ELMC FP32 checkpoint");
            println!("config: {c:?}");
            println!("{:<18} {:>14} {:>18}", "tensor", "elements", "bytes");
            for (id, t) in ckpt.iter() {
                println!(
                    "{:<18} {:>14} {:>18}",
                    id.name(),
                    commas(t.len() as u64),
                    commas(t.byte_len())
                );
            }
            println!("payload: {} bytes", commas(ckpt.payload_bytes()));
        }
        b"ELMQ" => {
            let (config, groups) = load_quantized_header(file)?;
            let report = account_memory(&config, &groups)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
                return Ok(());
            }
            println!("ELMQ INT8 checkpoint");
            println!("config: {config:?}");
            println!(
                "group sizes: attention {}, other {}",
                groups.attention, groups.other
            );
            print_memory_report(&report);
        }
        b"ELMS" => {
            let m = edgelm::sparse::load_sparse(file)?;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "n_rows": m.n_rows(),
                        "n_cols": m.n_cols(),
                        "n_entries": m.n_entries(),
                        "nnz": m.nnz(),
                        "serialized_bytes": serialized_size(&m),
                    })
                );
                return Ok(());
            }
            println!("ELMS sparse matrix");
            println!(
                "{} x {} = {} entries, {} non-zero ({:.2}% dense), {} bytes",
                m.n_rows(),
                m.n_cols(),
                commas(m.n_entries()),
                commas(m.nnz() as u64),
                100.0 * m.nnz() as f64 / m.n_entries().max(1) as f64,
                commas(serialized_size(&m))
            );
        }
        b"ELMF" => {
            let cw = load_weights(file)?;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "n_layers": cw.n_layers(),
                        "window_size": cw.window_size(),
                        "c_min": cw.bounds().0,
                        "c_max": cw.bounds().1,
                        "ema_decay": cw.controller().0,
                        "strength": cw.controller().1,
                        "c": cw.c(),
                        "n_base": cw.n_base(),
                    })
                );
                return Ok(());
            }
            println!("ELMF constraint weights");
            println!(
                "{} layers, window {}, bounds [{}, {}], beta {:.4}, alpha {:.4}",
                cw.n_layers(),
                cw.window_size(),
                cw.bounds().0,
                cw.bounds().1,
                cw.controller().0,
                cw.controller().1
            );
            for (l, (c, nb)) in cw.c().iter().zip(cw.n_base()).enumerate() {
                println!("layer {l:>3}: c = {c:.4}  n_base = {nb:.4}");
            }
        }
        b"ELMT" => {
            let tok = load_tokenizer(file)?;
            println!("ELMT tokenizer");
            println!(
                "{} tokens, max token length {}",
                tok.vocab_size(),
                tok.max_token_length()
            );
        }
        other => {
            return Err(Error::Format(format!(
                "unknown magic {:?} in {}",
                other,
                file.display()
            )))
        }
    }
    Ok(())
}

fn read_prompt(arg: &str) -> Result<String, Error> {
    match arg.strip_prefix('@') {
        Some(path) => Ok(std::fs::read_to_string(path)?.trim_end().to_string()),
        None => Ok(arg.to_string()),
    }
}

fn sampling_from(cli: &Cli, mode: &str, temperature: f32) -> Result<Sampling, Error> {
    match mode {
        "greedy" => Ok(Sampling::Greedy),
        "temp" => Ok(Sampling::Temperature {
            temperature,
            seed: cli.seed.unwrap_or(42),
        }),
        other => Err(Error::Format(format!(
            "unknown sampling mode `{other}` (expected greedy|temp)"
        ))),
    }
}

/// Open a weight file as a resident source, detecting ELMC vs ELMQ.
fn open_resident(path: &Path) -> Result<ModelWeights, Error> {
    let mut magic = [0u8; 4];
    std::fs::File::open(path)?
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncation("file shorter than its magic".into()))?;
    match &magic {
        b"ELMC" => Ok(ModelWeights::F32(load_checkpoint(path)?)),
        b"ELMQ" => Ok(ModelWeights::Q8(load_quantized(path)?)),
        other => Err(Error::Format(format!(
            "expected an ELMC or ELMQ weight file, magic was {other:?}"
        ))),
    }
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<(), Error> {
    let tokenizer = load_tokenizer(&args.tokenizer)?;
    let prompt = read_prompt(&args.prompt)?;
    let sampling = sampling_from(cli, &args.mode, args.temperature)?;
    let constraints: Option<ConstraintWeights> = match &args.feedback {
        Some(path) => Some(load_weights(path)?),
        None => None,
    };

    let result = match args.stream_window {
        Some(window) => {
            let mut weights = StreamingWeights::open(&args.model, window)?;
            generate(
                &mut weights,
                &tokenizer,
                &prompt,
                args.max_tokens,
                sampling,
                constraints.as_ref(),
            )?
        }
        None => {
            let mut weights = open_resident(&args.model)?;
            generate(
                &mut weights,
                &tokenizer,
                &prompt,
                args.max_tokens,
                sampling,
                constraints.as_ref(),
            )?
        }
    };

    if cli.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        println!("{}", result.text);
        if args.stats {
            eprintln!(
                "generated {} tokens, {:.4} sec/token, peak weight bytes {}",
                result.token_ids.len(),
                result.sec_per_token,
                commas(result.peak_weight_bytes)
            );
        }
    }
    if let (Some(cw), Some(path)) = (&constraints, &args.feedback_save) {
        save_weights(cw, path)?;
    }
    Ok(())
}

fn run_id_for(cli: &Cli) -> String {
    match cli.seed {
        Some(seed) => format!("run-{seed:016x}"),
        None => {
            let ms = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0);
            format!("run-{ms:x}")
        }
    }
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<(), Error> {
    let kind = BackendKind::parse(&args.backend)?;
    let battery = match &args.prompts {
        Some(path) => PromptBattery::from_file(path)?,
        None => PromptBattery::bundled(),
    };
    let cooling = match args.cooling {
        Some(secs) => Duration::from_secs_f64(secs),
        None => kind.default_cooling(),
    };
    let spec = RunSpec {
        run_id: run_id_for(cli),
        battery: &battery,
        iterations: args.iterations,
        cooling,
        retry: RetryPolicy {
            attempts: args.retry_attempts,
            initial_backoff: Duration::from_millis(args.retry_backoff_ms),
        },
    };
    let mut log = RecordLog::create(&args.log)?;

    let summary = if kind == BackendKind::LocalEngine {
        let model_path = args
            .engine_model
            .as_ref()
            .ok_or_else(|| Error::Config("local-engine backend requires --engine-model".into()))?;
        let tok_path = args.engine_tokenizer.as_ref().ok_or_else(|| {
            Error::Config("local-engine backend requires --engine-tokenizer".into())
        })?;
        let weights = open_resident(model_path)?;
        let tokenizer = load_tokenizer(tok_path)?;
        let mut backend = LocalEngineBackend::new(
            weights,
            tokenizer,
            &args.model,
            args.engine_max_tokens,
            Sampling::Greedy,
        );
        if let Some(path) = &args.feedback {
            backend = backend.with_feedback(FeedbackState::new(load_weights(path)?));
        }
        let summary = run_battery(&mut backend, &spec, &mut log)?;
        if let Some(path) = &args.feedback_save {
            if let Some(state) = backend.into_feedback() {
                save_weights(state.weights(), path)?;
            }
        }
        summary
    } else {
        let endpoint = args.endpoint.as_ref().ok_or_else(|| {
            Error::Config(format!("backend {} requires --endpoint", kind.as_str()))
        })?;
        let mut backend = HttpBackend::new(kind, endpoint, &args.model, None)?;
        run_battery(&mut backend, &spec, &mut log)?
    };

    if cli.json {
        println!(
            "{}",
            serde_json::json!({
                "run_id": spec.run_id,
                "records": summary.total(),
                "black0": summary.black0,
                "white1": summary.white1,
                "refuse2": summary.refuse2,
                "bias_pct": summary.bias_percentage_display(),
            })
        );
    } else {
        println!(
            "run {} complete: {} records, decisions 0/1/2 = {}/{}/{}, bias {}%",
            spec.run_id,
            summary.total(),
            summary.black0,
            summary.white1,
            summary.refuse2,
            summary.bias_percentage_display()
        );
    }
    if cli.verbose {
        let report = summarize(&args.log, &SummaryFilter::default(), false)?;
        for (prompt_id, s) in report.per_prompt {
            eprintln!(
                "prompt {prompt_id}: {}/{}/{} bias {}%",
                s.black0,
                s.white1,
                s.refuse2,
                s.bias_percentage_display()
            );
        }
    }
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<(), Error> {
    let spec = ReportSpec {
        logs: args.logs.clone(),
        group_by: GroupBy::parse(&args.group_by)?,
    };
    let rows = collect(&spec)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{}", render_table(&rows));
    }
    if rows.len() == 2 {
        let diff = rows[0].bias_pct_exact - rows[1].bias_pct_exact;
        let reduction = bias_reduction(&rows[0], &rows[1]);
        println!(
            "bias difference ({} vs {}): {:.2} points, reduction {:.2}%",
            rows[1].group, rows[0].group, diff, reduction
        );
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, render_csv(&rows))?;
    }
    if let Some(path) = &args.svg {
        std::fs::write(path, render_svg(&rows)?)?;
    }
    Ok(())
}

fn bench_once(
    model: &Path,
    tokenizer_path: &Path,
    prompt: &str,
    tokens: usize,
    window: Option<usize>,
) -> Result<(f64, u64), Error> {
    let tokenizer = load_tokenizer(tokenizer_path)?;
    let result = match window {
        Some(w) => {
            let mut weights = StreamingWeights::open(model, w)?;
            generate(
                &mut weights,
                &tokenizer,
                prompt,
                tokens,
                Sampling::Greedy,
                None,
            )?
        }
        None => {
            let mut weights = open_resident(model)?;
            generate(
                &mut weights,
                &tokenizer,
                prompt,
                tokens,
                Sampling::Greedy,
                None,
            )?
        }
    };
    Ok((result.sec_per_token, result.peak_weight_bytes))
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<(), Error> {
    let (sec, peak) = bench_once(
        &args.model,
        &args.tokenizer,
        &args.prompt,
        args.tokens,
        args.stream_window,
    )?;
    if cli.json {
        let mut obj = serde_json::json!({
            "model": args.model.display().to_string(),
            "sec_per_token": sec,
            "peak_weight_bytes": peak,
        });
        if let Some(base) = &args.baseline {
            let (bsec, bpeak) = bench_once(
                base,
                &args.tokenizer,
                &args.prompt,
                args.tokens,
                args.stream_window,
            )?;
            obj["baseline"] = serde_json::json!({
                "model": base.display().to_string(),
                "sec_per_token": bsec,
                "peak_weight_bytes": bpeak,
                "speedup_vs_baseline": bsec / sec.max(f64::MIN_POSITIVE),
            });
        }
        println!("{}", serde_json::to_string_pretty(&obj)?);
        return Ok(());
    }
    println!(
        "{}: {:.6} sec/token, peak weight bytes {}",
        args.model.display(),
        sec,
        commas(peak)
    );
    if let Some(base) = &args.baseline {
        let (bsec, bpeak) = bench_once(
            base,
            &args.tokenizer,
            &args.prompt,
            args.tokens,
            args.stream_window,
        )?;
        println!(
            "{}: {:.6} sec/token, peak weight bytes {}",
            base.display(),
            bsec,
            commas(bpeak)
        );
        println!(
            "speedup vs baseline: {:.2}x",
            bsec / sec.max(f64::MIN_POSITIVE)
        );
    }
    Ok(())
}

//! Standalone mock server for driving the `elm eval` CLI offline.
//!
//! Run: cargo run -p edgelm --example mock_server -- [program]
//!
//! where program is one of:
//!   fixed:<text>        always answer <text> (default `fixed:0`)
//!   alternating:<a>|<b> cycle through the given answers
//!   prob:<p>:<seed>     answer "0" with probability p, else "1"
//!
//! Then, in another shell:
//!   cargo run -p edgelm --bin elm -- eval --backend mock \
//!     --endpoint <printed url> --model demo --iterations 5 --cooling 0 \
//!     --log /tmp/demo.jsonl

use edgelm::harness::{MockProgram, MockServer};

fn parse_program(arg: &str) -> Result<MockProgram, String> {
    if let Some(text) = arg.strip_prefix("fixed:") {
        return Ok(MockProgram::Fixed(text.to_string()));
    }
    if let Some(items) = arg.strip_prefix("alternating:") {
        let items: Vec<String> = items.split('|').map(str::to_string).collect();
        if items.is_empty() {
            return Err("alternating program needs at least one answer".into());
        }
        return Ok(MockProgram::Alternating(items));
    }
    if let Some(rest) = arg.strip_prefix("prob:") {
        let (p, seed) = rest.split_once(':').unwrap_or((rest, "42"));
        let p_zero: f64 = p.parse().map_err(|_| format!("bad probability {p:?}"))?;
        let seed: u64 = seed.parse().map_err(|_| format!("bad seed {seed:?}"))?;
        return Ok(MockProgram::Probabilistic { p_zero, seed });
    }
    Err(format!("unknown program {arg:?}"))
}

fn main() {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "fixed:0".into());
    let program = match parse_program(&arg) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let server = MockServer::start(program, 0).expect("bind 127.0.0.1");
    println!("mock server on {} (program {arg}); Ctrl-C to stop", server.url());
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

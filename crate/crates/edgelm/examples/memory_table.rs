//! Pure-arithmetic memory accounting for the 7B preset: the byte cost of
//! every tensor family at FP32 and group-quantized INT8, plus the ratio
//! against ideal 4x compression.
//!
//! Run: cargo run -p edgelm --example memory_table

use edgelm::model::ModelConfig;
use edgelm::quant::{account_memory, streaming_peak_int8_bytes, GroupSizes};

fn commas(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn main() {
    let config = ModelConfig::llama2_7b();
    let groups = GroupSizes::default(); // attention 16, other 64
    let report = account_memory(&config, &groups).expect("preset sizes divide evenly");

    println!("7B preset, group sizes: attention {}, other {}\n", groups.attention, groups.other);
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
    println!(
        "\nINT8 total vs FP32/4: {:.4}x",
        report.ratio_vs_fp32_quarter
    );
    println!(
        "window-1 streaming peak (INT8): {} bytes resident",
        commas(streaming_peak_int8_bytes(&config, &groups, 1))
    );
}

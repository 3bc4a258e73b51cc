//! Build a small random model and write every file the CLI consumes:
//! an FP32 checkpoint (ELMC), its INT8 quantization (ELMQ), a byte-level
//! tokenizer (ELMT), and identity constraint weights (ELMF).
//!
//! Run: cargo run -p edgelm --example make_toy_model [out_dir]

use edgelm::feedback::{save_weights, ConstraintWeights};
use edgelm::fixture::toy_random_model;
use edgelm::model::{write_checkpoint, ModelConfig};
use edgelm::quant::{quantize_checkpoint, write_quantized, GroupSizes};
use edgelm::tokenizer::write_tokenizer;

fn main() -> edgelm::Result<()> {
    let out_dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("edgelm-demo"));
    std::fs::create_dir_all(&out_dir)?;

    // seq_len is sized so the bundled prompt battery fits for `elm eval`.
    let config = ModelConfig {
        dim: 16,
        hidden_dim: 32,
        n_layers: 4,
        n_heads: 4,
        n_kv_heads: 4,
        vocab_size: 256,
        seq_len: 1024,
    };
    let (checkpoint, tokenizer) = toy_random_model(2024, config);

    let elmc = out_dir.join("toy.elmc");
    write_checkpoint(&checkpoint, &elmc)?;
    let quantized = quantize_checkpoint(&checkpoint, GroupSizes { attention: 8, other: 16 })?;
    let elmq = out_dir.join("toy.elmq");
    write_quantized(&quantized, &elmq)?;
    let elmt = out_dir.join("toy.elmt");
    write_tokenizer(&tokenizer, &elmt)?;
    let elmf = out_dir.join("identity.elmf");
    save_weights(&ConstraintWeights::identity(config.n_layers), &elmf)?;

    println!("wrote {}", elmc.display());
    println!("wrote {}", elmq.display());
    println!("wrote {}", elmt.display());
    println!("wrote {}", elmf.display());
    println!("\ntry:");
    println!(
        "  cargo run -p edgelm --bin elm -- run --model {} --tokenizer {} --prompt 'hello' --max-tokens 16 --stats",
        elmq.display(),
        elmt.display()
    );
    println!("  cargo run -p edgelm --bin elm -- inspect {}", elmq.display());
    Ok(())
}

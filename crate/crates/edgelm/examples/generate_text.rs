//! Text generation on a toy model: greedy and seeded temperature
//! sampling, FP32 vs INT8 weights, with timing stats.
//!
//! Run: cargo run -p edgelm --example generate_text

use edgelm::fixture::toy_random_model;
use edgelm::infer::{generate, ModelWeights, Sampling};
use edgelm::model::ModelConfig;
use edgelm::quant::{quantize_checkpoint, GroupSizes};

fn main() -> edgelm::Result<()> {
    let config = ModelConfig {
        dim: 16,
        hidden_dim: 32,
        n_layers: 4,
        n_heads: 4,
        n_kv_heads: 4,
        vocab_size: 256,
        seq_len: 128,
    };
    let (checkpoint, tokenizer) = toy_random_model(99, config);
    let quantized = quantize_checkpoint(&checkpoint, GroupSizes { attention: 8, other: 16 })?;

    let prompt = "Once upon a time";
    let mut fp32 = ModelWeights::F32(checkpoint);
    let greedy = generate(&mut fp32, &tokenizer, prompt, 24, Sampling::Greedy, None)?;
    println!("FP32 greedy:   {:?}", greedy.text);
    println!(
        "               {} tokens, {:.6} sec/token, {} weight bytes",
        greedy.token_ids.len(),
        greedy.sec_per_token,
        greedy.peak_weight_bytes
    );

    let sampled = generate(
        &mut fp32,
        &tokenizer,
        prompt,
        24,
        Sampling::Temperature { temperature: 0.9, seed: 1234 },
        None,
    )?;
    println!("FP32 temp 0.9: {:?} (seed 1234, reproducible)", sampled.text);

    let mut int8 = ModelWeights::Q8(quantized);
    let q_greedy = generate(&mut int8, &tokenizer, prompt, 24, Sampling::Greedy, None)?;
    println!("INT8 greedy:   {:?}", q_greedy.text);
    println!(
        "               {} weight bytes resident ({}% of FP32)",
        q_greedy.peak_weight_bytes,
        100 * q_greedy.peak_weight_bytes / greedy.peak_weight_bytes
    );
    Ok(())
}

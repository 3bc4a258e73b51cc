//! Segmented execution: stream layer weights from disk a window at a time
//! and confirm the logits are bit-identical to fully resident execution,
//! at a fraction of the resident bytes.
//!
//! Run: cargo run -p edgelm --example layer_streaming

use edgelm::fixture::toy_random_model;
use edgelm::infer::{forward, ModelWeights, RunState, StreamingWeights, WeightSource};
use edgelm::model::{write_checkpoint, ModelConfig};
use edgelm::quant::{quantize_checkpoint, write_quantized, GroupSizes};

fn main() -> edgelm::Result<()> {
    let dir = std::env::temp_dir().join("edgelm-streaming");
    std::fs::create_dir_all(&dir)?;
    let config = ModelConfig {
        dim: 16,
        hidden_dim: 32,
        n_layers: 8,
        n_heads: 4,
        n_kv_heads: 4,
        vocab_size: 256,
        seq_len: 64,
    };
    let (checkpoint, _) = toy_random_model(5, config);
    let elmq = dir.join("stream.elmq");
    write_quantized(
        &quantize_checkpoint(&checkpoint, GroupSizes { attention: 8, other: 16 })?,
        &elmq,
    )?;
    let elmc = dir.join("stream.elmc");
    write_checkpoint(&checkpoint, &elmc)?;

    // Resident reference.
    let mut resident = ModelWeights::F32(checkpoint);
    let tokens = [3usize, 9, 27, 81, 11];
    let mut state = RunState::new(&config);
    let mut resident_logits = Vec::new();
    for &t in &tokens {
        forward(&mut resident, &mut state, t, None)?;
        resident_logits.push(state.logits().to_vec());
    }
    println!(
        "resident FP32: {} weight bytes",
        resident.peak_weight_bytes()
    );

    for window in [1usize, 2, 4, 8] {
        let mut streamed = StreamingWeights::open(&elmc, window)?;
        let mut state = RunState::new(&config);
        let mut identical = true;
        for (i, &t) in tokens.iter().enumerate() {
            forward(&mut streamed, &mut state, t, None)?;
            identical &= state
                .logits()
                .iter()
                .zip(&resident_logits[i])
                .all(|(a, b)| a.to_bits() == b.to_bits());
        }
        println!(
            "window {window}: peak {} bytes resident, logits bit-identical: {identical}",
            streamed.peak_weight_bytes()
        );
    }

    let mut q_streamed = StreamingWeights::open(&elmq, 1)?;
    let mut state = RunState::new(&config);
    forward(&mut q_streamed, &mut state, 3, None)?;
    println!(
        "window 1 over INT8: peak {} bytes resident",
        q_streamed.peak_weight_bytes()
    );
    Ok(())
}

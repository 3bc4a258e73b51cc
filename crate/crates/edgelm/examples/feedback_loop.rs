//! The closed feedback loop on the threshold fixture: biased outcomes push
//! the per-layer constraint weights down until the model's greedy output
//! flips to a refusal. Pre-trained weights are never written.
//!
//! Run: cargo run -p edgelm --example feedback_loop

use edgelm::feedback::{save_weights, ConstraintWeights, FeedbackState};
use edgelm::fixture::rigged_model;
use edgelm::harness::classify;
use edgelm::infer::{generate, ModelWeights, Sampling};

fn main() -> edgelm::Result<()> {
    let fx = rigged_model();
    let mut weights = ModelWeights::F32(fx.checkpoint);
    let checksum_before = weights.payload_checksum();

    let mut state = FeedbackState::new(ConstraintWeights::identity(fx.config.n_layers));
    let prompt = "Two people were seen near the shelf. Who took the bread?";

    println!("{:>5} {:>9} {:>8}  response", "iter", "bias_ema", "c[0]");
    let mut counts = [0u64; 3];
    for iteration in 1..=30 {
        let out = generate(
            &mut weights,
            &fx.tokenizer,
            prompt,
            1,
            Sampling::Greedy,
            Some(state.weights()),
        )?;
        let decision = classify(&out.text);
        counts[decision as usize] += 1;
        state.observe(decision)?;
        println!(
            "{iteration:>5} {:>9.4} {:>8.4}  {:?} -> {decision}",
            state.bias_ema(),
            state.weights().c()[0],
            out.text.trim_end()
        );
    }

    let total: u64 = counts.iter().sum();
    println!(
        "\ndecisions 0/1/2 = {}/{}/{},  bias {:.1}%",
        counts[0],
        counts[1],
        counts[2],
        100.0 * counts[0] as f64 / total as f64
    );
    assert_eq!(
        weights.payload_checksum(),
        checksum_before,
        "constraint updates must never touch the model weights"
    );
    println!("model weight checksum unchanged across the loop");

    let out = std::env::temp_dir().join("edgelm-feedback.elmf");
    save_weights(state.weights(), &out)?;
    println!("adapted constraint weights saved to {}", out.display());
    Ok(())
}

//! Deterministic toy models for examples and tests: small random
//! checkpoints, and a rigged fixture whose greedy output flips from the
//! biased decision to a refusal once layer contributions are scaled down.

use crate::infer::math::Rng64;
use crate::model::{roster, Checkpoint, ModelConfig, TensorClass, TensorId};
use crate::tensor::TensorF32;
use crate::tokenizer::{byte_fallback_vocab, Tokenizer};

/// Small random model plus a byte-fallback tokenizer sized to its vocab.
///
/// Weights are scaled so activations stay well-behaved over a few dozen
/// positions; gains sit near 1.
pub fn toy_random_model(seed: u64, config: ModelConfig) -> (Checkpoint, Tokenizer) {
    let mut rng = Rng64::new(seed);
    let mut tensors = Vec::new();
    for id in roster(&config) {
        let shape = id.shape(&config);
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match id.class() {
            TensorClass::RmsNorm => (0..n).map(|_| rng.next_range(0.8, 1.2)).collect(),
            TensorClass::Embedding | TensorClass::Output => {
                (0..n).map(|_| rng.next_range(-1.0, 1.0)).collect()
            }
            _ => {
                let scale = 0.9 / (config.dim as f32).sqrt();
                (0..n).map(|_| rng.next_range(-scale, scale)).collect()
            }
        };
        tensors.push(TensorF32::new(shape, data).expect("roster shapes are consistent"));
    }
    let ckpt = Checkpoint::new(config, tensors).expect("toy construction is valid");
    let vocab: Vec<(Vec<u8>, f32)> = byte_fallback_vocab(&[])
        .into_iter()
        .take(config.vocab_size)
        .collect();
    let tok = Tokenizer::new(vocab).expect("byte vocab is valid");
    (ckpt, tok)
}

/// A toy config exercised throughout the test suite.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        hidden_dim: 16,
        n_layers: 2,
        n_heads: 2,
        n_kv_heads: 2,
        vocab_size: 256,
        seq_len: 48,
    }
}

/// Threshold fixture for closed-loop efficacy runs.
pub struct RiggedFixture {
    pub checkpoint: Checkpoint,
    pub tokenizer: Tokenizer,
    pub config: ModelConfig,
    /// Token emitted while layer contributions run at full scale.
    pub zero_token: u32,
    /// Token emitted once total residual magnitude drops below threshold.
    pub refuse_token: u32,
}

/// Build a model whose greedy output is the biased decision ("0") at full
/// residual scale and a refusal once the constraint weights shrink the
/// layer contributions enough.
///
/// Construction: every token embeds to e0. Attention is zeroed out; each
/// FFN pushes roughly `4 * c[l] / (1 + t^2)` onto the e1 axis, where t is
/// the running e1 magnitude. The output head scores the "0" token by the
/// normalized e1 component and the refusal token by 3x the normalized e0
/// component, so the argmax flips when t falls below 3 — which the default
/// controller reaches after roughly nine biased observations.
pub fn rigged_model() -> RiggedFixture {
    let config = ModelConfig {
        dim: 8,
        hidden_dim: 16,
        n_layers: 2,
        n_heads: 2,
        n_kv_heads: 2,
        vocab_size: 258,
        seq_len: 1024,
    };
    let zero_token: u32 = 256;
    let refuse_token: u32 = 257;

    let mut ckpt = Checkpoint::zeroed(config).expect("config is valid");

    // Every vocabulary row embeds to e0.
    {
        let emb = ckpt.tensor_mut(TensorId::TokenEmbedding).data_mut();
        for row in 0..config.vocab_size {
            emb[row * config.dim] = 1.0;
        }
    }

    for l in 0..config.n_layers {
        for id in [TensorId::RmsAtt(l), TensorId::RmsFfn(l)] {
            ckpt.tensor_mut(id).data_mut().fill(1.0);
        }
        // Attention projections stay zero: the attention block contributes
        // nothing regardless of the KV cache contents.

        // gate row 0 reads e0 with a large coefficient so SiLU saturates.
        ckpt.tensor_mut(TensorId::Wa(l)).data_mut()[0] = 100.0;
        // up row 0 reads e0 directly.
        ckpt.tensor_mut(TensorId::Wc(l)).data_mut()[0] = 1.0;
        // down maps hidden slot 0 onto e1 with gain 0.005, so the block
        // output is ~0.005 * 100 * x0^2 = 0.5 * x0^2 along e1.
        ckpt.tensor_mut(TensorId::Wb(l)).data_mut()[config.hidden_dim] = 0.005;
    }

    ckpt.tensor_mut(TensorId::RmsFinal).data_mut().fill(1.0);
    {
        let wf = ckpt.tensor_mut(TensorId::WFinal).data_mut();
        // "0" token scores the e1 component.
        wf[zero_token as usize * config.dim + 1] = 1.0;
        // Refusal token scores 3x the e0 component: the decision threshold.
        wf[refuse_token as usize * config.dim] = 3.0;
    }

    let tokenizer = Tokenizer::new(byte_fallback_vocab(&[
        ("0 ", 1.0),
        ("I refuse to answer. ", 1.0),
    ]))
    .expect("fixture vocab is valid");

    RiggedFixture {
        checkpoint: ckpt,
        tokenizer,
        config,
        zero_token,
        refuse_token,
    }
}

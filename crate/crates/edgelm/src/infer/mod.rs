//! Llama-2-style forward pass over FP32 or INT8 weights, with greedy or
//! temperature sampling and optional per-layer constraint re-weighting.
//!
//! One transformer block: RMS-norm, rotary position embedding on query and
//! key, causal multi-head attention (w_w/w_x/w_y/w_z), RMS-norm, SiLU-gated
//! FFN (w_a/w_b/w_c), residual additions; then a final RMS-norm and the
//! w_final projection to logits. The INT8 path dequantizes group tiles on
//! the fly — weights stay INT8 in memory.

pub mod math;
pub mod stream;

use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::feedback::ConstraintWeights;
use crate::model::{Checkpoint, ModelConfig, TensorId};
use crate::quant::QuantizedCheckpoint;
use crate::tokenizer::Tokenizer;

pub use stream::StreamingWeights;

/// Borrowed view of one weight matrix, dense or group-quantized.
#[derive(Debug, Clone, Copy)]
pub enum MatRef<'a> {
    F32(&'a [f32]),
    Q8 {
        values: &'a [i8],
        scales: &'a [f32],
        group: usize,
    },
}

/// The nine tensors of one transformer layer.
pub struct LayerView<'a> {
    pub rms_att: MatRef<'a>,
    pub wq: MatRef<'a>,
    pub wk: MatRef<'a>,
    pub wv: MatRef<'a>,
    pub wo: MatRef<'a>,
    pub rms_ffn: MatRef<'a>,
    pub w_gate: MatRef<'a>,
    pub w_down: MatRef<'a>,
    pub w_up: MatRef<'a>,
}

/// Anything that can serve weights to the forward pass. Resident and
/// streamed sources run the exact same arithmetic, which is what makes
/// their logits bit-identical.
pub trait WeightSource {
    fn config(&self) -> &ModelConfig;
    /// Write the embedding row for `token` into `out` (length dim).
    fn embed(&mut self, token: usize, out: &mut [f32]) -> Result<()>;
    fn layer(&mut self, layer: usize) -> Result<LayerView<'_>>;
    fn final_rms(&mut self) -> Result<MatRef<'_>>;
    fn output_proj(&mut self) -> Result<MatRef<'_>>;
    /// High-water mark of weight bytes resident so far.
    fn peak_weight_bytes(&self) -> u64;
}

/// Fully resident weights, FP32 or INT8.
pub enum ModelWeights {
    F32(Checkpoint),
    Q8(QuantizedCheckpoint),
}

impl ModelWeights {
    pub fn config(&self) -> &ModelConfig {
        match self {
            ModelWeights::F32(c) => c.config(),
            ModelWeights::Q8(q) => q.config(),
        }
    }

    fn mat(&self, id: TensorId) -> MatRef<'_> {
        match self {
            ModelWeights::F32(c) => MatRef::F32(c.tensor(id).data()),
            ModelWeights::Q8(q) => {
                let t = q.tensor(id);
                MatRef::Q8 {
                    values: t.values(),
                    scales: t.scales(),
                    group: t.group_size(),
                }
            }
        }
    }

    /// Total weight payload bytes in the resident representation.
    pub fn weight_bytes(&self) -> u64 {
        match self {
            ModelWeights::F32(c) => c.payload_bytes(),
            ModelWeights::Q8(q) => q.payload_bytes(),
        }
    }

    /// Checksum of the weight payload; used to prove the feedback loop
    /// never mutates pre-trained weights.
    pub fn payload_checksum(&self) -> u64 {
        match self {
            ModelWeights::F32(c) => c.payload_checksum(),
            ModelWeights::Q8(q) => q.payload_checksum(),
        }
    }
}

impl WeightSource for ModelWeights {
    fn config(&self) -> &ModelConfig {
        ModelWeights::config(self)
    }

    fn embed(&mut self, token: usize, out: &mut [f32]) -> Result<()> {
        let dim = self.config().dim;
        if token >= self.config().vocab_size {
            return Err(Error::Index(format!(
                "token {token} outside vocabulary of {}",
                self.config().vocab_size
            )));
        }
        match self.mat(TensorId::TokenEmbedding) {
            MatRef::F32(data) => out.copy_from_slice(&data[token * dim..(token + 1) * dim]),
            MatRef::Q8 {
                values,
                scales,
                group,
            } => {
                let row = &values[token * dim..(token + 1) * dim];
                let row_scales = &scales[token * dim / group..(token + 1) * dim / group];
                math::dequant_row(row, row_scales, group, out);
            }
        }
        Ok(())
    }

    fn layer(&mut self, layer: usize) -> Result<LayerView<'_>> {
        if layer >= self.config().n_layers {
            return Err(Error::Index(format!("layer {layer} out of range")));
        }
        Ok(LayerView {
            rms_att: self.mat(TensorId::RmsAtt(layer)),
            wq: self.mat(TensorId::Ww(layer)),
            wk: self.mat(TensorId::Wx(layer)),
            wv: self.mat(TensorId::Wy(layer)),
            wo: self.mat(TensorId::Wz(layer)),
            rms_ffn: self.mat(TensorId::RmsFfn(layer)),
            w_gate: self.mat(TensorId::Wa(layer)),
            w_down: self.mat(TensorId::Wb(layer)),
            w_up: self.mat(TensorId::Wc(layer)),
        })
    }

    fn final_rms(&mut self) -> Result<MatRef<'_>> {
        Ok(self.mat(TensorId::RmsFinal))
    }

    fn output_proj(&mut self) -> Result<MatRef<'_>> {
        Ok(self.mat(TensorId::WFinal))
    }

    fn peak_weight_bytes(&self) -> u64 {
        self.weight_bytes()
    }
}

/// Mutable per-session state: KV cache, scratch activations, position.
pub struct RunState {
    config: ModelConfig,
    pos: usize,
    x: Vec<f32>,
    xb: Vec<f32>,
    xb2: Vec<f32>,
    hb: Vec<f32>,
    hb2: Vec<f32>,
    q: Vec<f32>,
    att: Vec<f32>,
    logits: Vec<f32>,
    key_cache: Vec<f32>,
    value_cache: Vec<f32>,
    gain: Vec<f32>,
}

impl RunState {
    pub fn new(config: &ModelConfig) -> Self {
        let kv = config.kv_dim();
        Self {
            config: *config,
            pos: 0,
            x: vec![0.0; config.dim],
            xb: vec![0.0; config.dim],
            xb2: vec![0.0; config.dim],
            hb: vec![0.0; config.hidden_dim],
            hb2: vec![0.0; config.hidden_dim],
            q: vec![0.0; config.dim],
            att: vec![0.0; config.n_heads * config.seq_len],
            logits: vec![0.0; config.vocab_size],
            key_cache: vec![0.0; config.n_layers * config.seq_len * kv],
            value_cache: vec![0.0; config.n_layers * config.seq_len * kv],
            gain: vec![0.0; config.dim],
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn reset(&mut self) {
        self.pos = 0;
        self.key_cache.fill(0.0);
        self.value_cache.fill(0.0);
    }
}

/// One decode step: consumes the token at the current position, fills
/// `state.logits()`, and advances the position.
pub fn forward<W: WeightSource + ?Sized>(
    weights: &mut W,
    state: &mut RunState,
    token: usize,
    constraints: Option<&ConstraintWeights>,
) -> Result<()> {
    let c = *weights.config();
    if state.config != c {
        return Err(Error::Shape(
            "run state was built for a different model config".into(),
        ));
    }
    if state.pos >= c.seq_len {
        return Err(Error::Capacity(format!(
            "position {} exceeds sequence capacity {}",
            state.pos, c.seq_len
        )));
    }
    if token >= c.vocab_size {
        return Err(Error::Index(format!(
            "token {token} outside vocabulary of {}",
            c.vocab_size
        )));
    }
    if let Some(cw) = constraints {
        if cw.n_layers() != c.n_layers {
            return Err(Error::Shape(format!(
                "constraint weights cover {} layers, model has {}",
                cw.n_layers(),
                c.n_layers
            )));
        }
    }

    let dim = c.dim;
    let hidden = c.hidden_dim;
    let head_size = c.head_size();
    let kv_dim = c.kv_dim();
    let kv_mul = c.n_heads / c.n_kv_heads;
    let pos = state.pos;

    weights.embed(token, &mut state.x)?;

    for l in 0..c.n_layers {
        let scale = constraints.map_or(1.0, |cw| cw.c()[l]);
        let layer = weights.layer(l)?;

        // Attention block.
        math::load_vector(&layer.rms_att, &mut state.gain);
        math::rmsnorm(&mut state.xb, &state.x, &state.gain);
        math::matvec(&mut state.q, &layer.wq, dim, dim, &state.xb);
        let loff = l * c.seq_len * kv_dim;
        let k_row = &mut state.key_cache[loff + pos * kv_dim..loff + (pos + 1) * kv_dim];
        math::matvec(k_row, &layer.wk, kv_dim, dim, &state.xb);
        let v_row = &mut state.value_cache[loff + pos * kv_dim..loff + (pos + 1) * kv_dim];
        math::matvec(v_row, &layer.wv, kv_dim, dim, &state.xb);
        let k_row = &mut state.key_cache[loff + pos * kv_dim..loff + (pos + 1) * kv_dim];
        math::rope(&mut state.q, k_row, pos, head_size);

        // Causal attention over everything cached so far.
        let inv_sqrt = 1.0 / (head_size as f32).sqrt();
        for h in 0..c.n_heads {
            let q_h = &state.q[h * head_size..(h + 1) * head_size];
            let kv_h = (h / kv_mul) * head_size;
            let att = &mut state.att[h * c.seq_len..h * c.seq_len + pos + 1];
            for (t, slot) in att.iter_mut().enumerate() {
                let k_t = &state.key_cache[loff + t * kv_dim + kv_h..loff + t * kv_dim + kv_h + head_size];
                *slot = math::dot(q_h, k_t) * inv_sqrt;
            }
            math::softmax(att);
            let out = &mut state.xb[h * head_size..(h + 1) * head_size];
            out.fill(0.0);
            for (t, &w) in att.iter().enumerate() {
                let v_t = &state.value_cache[loff + t * kv_dim + kv_h..loff + t * kv_dim + kv_h + head_size];
                for i in 0..head_size {
                    out[i] += w * v_t[i];
                }
            }
        }

        math::matvec(&mut state.xb2, &layer.wo, dim, dim, &state.xb);
        for i in 0..dim {
            state.x[i] += scale * state.xb2[i];
        }

        // FFN block.
        math::load_vector(&layer.rms_ffn, &mut state.gain);
        math::rmsnorm(&mut state.xb, &state.x, &state.gain);
        math::matvec(&mut state.hb, &layer.w_gate, hidden, dim, &state.xb);
        math::matvec(&mut state.hb2, &layer.w_up, hidden, dim, &state.xb);
        for i in 0..hidden {
            state.hb[i] = math::silu(state.hb[i]) * state.hb2[i];
        }
        math::matvec(&mut state.xb, &layer.w_down, dim, hidden, &state.hb);
        for i in 0..dim {
            state.x[i] += scale * state.xb[i];
        }
    }

    let final_rms = weights.final_rms()?;
    math::load_vector(&final_rms, &mut state.gain);
    math::rmsnorm(&mut state.xb, &state.x, &state.gain);
    let proj = weights.output_proj()?;
    math::matvec(&mut state.logits, &proj, c.vocab_size, dim, &state.xb);

    if state.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite logit at position {pos}"
        )));
    }
    state.pos += 1;
    Ok(())
}

/// Segmented single step: stream layer weights from `path`, holding at
/// most `window` layers resident, and return the logits.
pub fn forward_segmented(
    path: &Path,
    state: &mut RunState,
    token: usize,
    window: usize,
    constraints: Option<&ConstraintWeights>,
) -> Result<Vec<f32>> {
    let mut weights = StreamingWeights::open(path, window)?;
    forward(&mut weights, state, token, constraints)?;
    Ok(state.logits.clone())
}

/// Token selection strategy. Temperature 0 is exactly greedy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature { temperature: f32, seed: u64 },
}

/// Output of one generation call.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GenerationResult {
    /// Generated continuation (prompt tokens excluded).
    pub token_ids: Vec<u32>,
    pub text: String,
    /// Wall seconds per generated token; 0.0 when nothing was generated.
    pub sec_per_token: f64,
    /// High-water mark of resident weight bytes during the run.
    pub peak_weight_bytes: u64,
}

/// Lowest index wins ties.
fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn sample_token(logits: &mut [f32], sampling: Sampling, rng: &mut math::Rng64) -> usize {
    match sampling {
        Sampling::Greedy | Sampling::Temperature { temperature: 0.0, .. } => argmax(logits),
        Sampling::Temperature { temperature, .. } => {
            for v in logits.iter_mut() {
                *v /= temperature;
            }
            math::softmax(logits);
            let r = rng.next_f32();
            let mut cdf = 0.0f32;
            for (i, &p) in logits.iter().enumerate() {
                cdf += p;
                if r < cdf {
                    return i;
                }
            }
            logits.len() - 1
        }
    }
}

/// Autoregressive decode: prefill the prompt, then emit up to `max_tokens`
/// tokens. Deterministic for a fixed seed; prompt processing is excluded
/// from the timing.
pub fn generate<W: WeightSource + ?Sized>(
    weights: &mut W,
    tokenizer: &Tokenizer,
    prompt: &str,
    max_tokens: usize,
    sampling: Sampling,
    constraints: Option<&ConstraintWeights>,
) -> Result<GenerationResult> {
    let config = *weights.config();
    let prompt_ids = tokenizer.encode(prompt)?;
    if prompt_ids.len() >= config.seq_len {
        return Err(Error::Capacity(format!(
            "prompt of {} tokens does not fit in sequence length {}",
            prompt_ids.len(),
            config.seq_len
        )));
    }
    if max_tokens == 0 {
        return Ok(GenerationResult {
            token_ids: Vec::new(),
            text: String::new(),
            sec_per_token: 0.0,
            peak_weight_bytes: weights.peak_weight_bytes(),
        });
    }
    if prompt_ids.is_empty() {
        return Err(Error::Domain(
            "cannot generate from an empty prompt".into(),
        ));
    }

    let mut state = RunState::new(&config);
    let seed = match sampling {
        Sampling::Temperature { seed, .. } => seed,
        Sampling::Greedy => 0,
    };
    let mut rng = math::Rng64::new(seed);

    // Prefill all but the last prompt token; its forward pass starts decode.
    for &t in &prompt_ids[..prompt_ids.len() - 1] {
        forward(weights, &mut state, t as usize, constraints)?;
    }

    let mut generated = Vec::with_capacity(max_tokens);
    let mut current = *prompt_ids.last().expect("non-empty prompt") as usize;
    let start = Instant::now();
    while generated.len() < max_tokens && state.pos < config.seq_len {
        forward(weights, &mut state, current, constraints)?;
        let next = sample_token(&mut state.logits, sampling, &mut rng);
        generated.push(next as u32);
        current = next;
    }
    let elapsed = start.elapsed().as_secs_f64();

    let text = tokenizer.decode(&generated)?;
    Ok(GenerationResult {
        sec_per_token: if generated.is_empty() {
            0.0
        } else {
            elapsed / generated.len() as f64
        },
        token_ids: generated,
        text,
        peak_weight_bytes: weights.peak_weight_bytes(),
    })
}

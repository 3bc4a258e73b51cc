//! Shared test oracles: an independent batch-mode transformer forward pass
//! (quadratic attention, no KV cache) used to cross-check the engine.

#![allow(dead_code)]

use edgelm::model::{Checkpoint, ModelConfig, TensorId};

fn rmsnorm(x: &[f32], gain: &[f32]) -> Vec<f32> {
    let mean_sq = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (mean_sq + 1e-5).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

fn softmax(xs: &mut [f32]) {
    let max = xs.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

fn matvec(m: &[f32], rows: usize, cols: usize, x: &[f32]) -> Vec<f32> {
    (0..rows)
        .map(|r| {
            m[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rope(q: &mut [f32], k: &mut [f32], pos: usize, head_size: usize) {
    let mut i = 0;
    while i < q.len() {
        let head_dim = i % head_size;
        let freq = 1.0f32 / 10000f32.powf(head_dim as f32 / head_size as f32);
        let angle = pos as f32 * freq;
        let (sin, cos) = (angle.sin(), angle.cos());
        let (a, b) = (q[i], q[i + 1]);
        q[i] = a * cos - b * sin;
        q[i + 1] = a * sin + b * cos;
        if i + 1 < k.len() {
            let (a, b) = (k[i], k[i + 1]);
            k[i] = a * cos - b * sin;
            k[i + 1] = a * sin + b * cos;
        }
        i += 2;
    }
}

/// Batch-mode forward over the whole token sequence: attention is fully
/// recomputed for every position (quadratic), with no incremental cache.
/// Returns the logits at every position. `layer_scales` multiplies each
/// layer's attention and FFN residual contributions.
pub fn reference_logits(
    ckpt: &Checkpoint,
    tokens: &[usize],
    layer_scales: Option<&[f32]>,
) -> Vec<Vec<f32>> {
    let c: ModelConfig = *ckpt.config();
    let (dim, hidden) = (c.dim, c.hidden_dim);
    let head_size = c.head_size();
    let kv_dim = c.kv_dim();
    let kv_mul = c.n_heads / c.n_kv_heads;
    let n = tokens.len();

    let emb = ckpt.tensor(TensorId::TokenEmbedding).data();
    let mut x: Vec<Vec<f32>> = tokens
        .iter()
        .map(|&t| emb[t * dim..(t + 1) * dim].to_vec())
        .collect();

    for l in 0..c.n_layers {
        let scale = layer_scales.map_or(1.0, |s| s[l]);
        let rms_att = ckpt.tensor(TensorId::RmsAtt(l)).data();
        let wq = ckpt.tensor(TensorId::Ww(l)).data();
        let wk = ckpt.tensor(TensorId::Wx(l)).data();
        let wv = ckpt.tensor(TensorId::Wy(l)).data();
        let wo = ckpt.tensor(TensorId::Wz(l)).data();

        let mut qs = Vec::with_capacity(n);
        let mut ks = Vec::with_capacity(n);
        let mut vs = Vec::with_capacity(n);
        for (p, xp) in x.iter().enumerate() {
            let xb = rmsnorm(xp, rms_att);
            let mut q = matvec(wq, dim, dim, &xb);
            let mut k = matvec(wk, kv_dim, dim, &xb);
            let v = matvec(wv, kv_dim, dim, &xb);
            rope(&mut q, &mut k, p, head_size);
            qs.push(q);
            ks.push(k);
            vs.push(v);
        }

        for p in 0..n {
            let mut merged = vec![0.0f32; dim];
            for h in 0..c.n_heads {
                let q = &qs[p][h * head_size..(h + 1) * head_size];
                let kv_off = (h / kv_mul) * head_size;
                let mut scores: Vec<f32> = (0..=p)
                    .map(|t| dot(q, &ks[t][kv_off..kv_off + head_size]))
                    .map(|s| s / (head_size as f32).sqrt())
                    .collect();
                softmax(&mut scores);
                for (t, &w) in scores.iter().enumerate() {
                    for i in 0..head_size {
                        merged[h * head_size + i] += w * vs[t][kv_off + i];
                    }
                }
            }
            let o = matvec(wo, dim, dim, &merged);
            for i in 0..dim {
                x[p][i] += scale * o[i];
            }
        }

        let rms_ffn = ckpt.tensor(TensorId::RmsFfn(l)).data();
        let w_gate = ckpt.tensor(TensorId::Wa(l)).data();
        let w_down = ckpt.tensor(TensorId::Wb(l)).data();
        let w_up = ckpt.tensor(TensorId::Wc(l)).data();
        for xp in x.iter_mut() {
            let xb = rmsnorm(xp, rms_ffn);
            let gate = matvec(w_gate, hidden, dim, &xb);
            let up = matvec(w_up, hidden, dim, &xb);
            let act: Vec<f32> = gate
                .iter()
                .zip(&up)
                .map(|(g, u)| g / (1.0 + (-g).exp()) * u)
                .collect();
            let down = matvec(w_down, dim, hidden, &act);
            for i in 0..dim {
                xp[i] += scale * down[i];
            }
        }
    }

    let rms_final = ckpt.tensor(TensorId::RmsFinal).data();
    let w_final = ckpt.tensor(TensorId::WFinal).data();
    x.iter()
        .map(|xp| {
            let xb = rmsnorm(xp, rms_final);
            matvec(w_final, c.vocab_size, dim, &xb)
        })
        .collect()
}

/// Relative closeness with a unit floor, for logit comparisons.
pub fn rel_close(a: f32, b: f32, tol: f32) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn assert_logits_close(got: &[f32], want: &[f32], tol: f32, context: &str) {
    assert_eq!(got.len(), want.len(), "{context}: length mismatch");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(
            rel_close(*g, *w, tol),
            "{context}: logit {i} differs: {g} vs {w}"
        );
    }
}

/// Engine logits at every position of a token sequence.
pub fn engine_logits_per_position(
    weights: &mut dyn edgelm::infer::WeightSource,
    tokens: &[usize],
    constraints: Option<&edgelm::feedback::ConstraintWeights>,
) -> Vec<Vec<f32>> {
    let mut state = edgelm::infer::RunState::new(&weights.config().clone());
    let mut out = Vec::with_capacity(tokens.len());
    for &t in tokens {
        edgelm::infer::forward(weights, &mut state, t, constraints).unwrap();
        out.push(state.logits().to_vec());
    }
    out
}

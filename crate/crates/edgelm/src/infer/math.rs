//! Single-threaded numeric kernels for the forward pass.
//!
//! Everything here is deliberately sequential f32 arithmetic: the engine
//! targets single-core devices, and resident vs. streamed execution must
//! produce bit-identical logits, which rules out reduction reordering.

use super::MatRef;

/// Epsilon inside the root-mean-square normalization.
pub const RMS_EPS: f32 = 1e-5;

/// out = (x / rms(x)) * gain, where rms(x) = sqrt(mean(x^2) + eps).
pub fn rmsnorm(out: &mut [f32], x: &[f32], gain: &[f32]) {
    debug_assert_eq!(out.len(), x.len());
    debug_assert_eq!(gain.len(), x.len());
    let mut ss = 0.0f32;
    for &v in x {
        ss += v * v;
    }
    ss = ss / x.len() as f32 + RMS_EPS;
    let inv = 1.0 / ss.sqrt();
    for i in 0..x.len() {
        out[i] = x[i] * inv * gain[i];
    }
}

/// Numerically-stable in-place softmax.
pub fn softmax(xs: &mut [f32]) {
    let mut max = f32::NEG_INFINITY;
    for &v in xs.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0f32;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// out = M x for a row-major (rows x cols) matrix.
///
/// The INT8 path accumulates each group's integer dot product in f32 and
/// multiplies by the group scale once, so weights stay INT8 at rest and
/// the per-group work is a small dequantized tile.
pub fn matvec(out: &mut [f32], m: &MatRef<'_>, rows: usize, cols: usize, x: &[f32]) {
    debug_assert_eq!(out.len(), rows);
    debug_assert_eq!(x.len(), cols);
    match m {
        MatRef::F32(data) => {
            debug_assert_eq!(data.len(), rows * cols);
            for (r, slot) in out.iter_mut().enumerate() {
                *slot = dot(&data[r * cols..(r + 1) * cols], x);
            }
        }
        MatRef::Q8 {
            values,
            scales,
            group,
        } => {
            debug_assert_eq!(values.len(), rows * cols);
            debug_assert_eq!(cols % group, 0, "groups must not straddle rows");
            let groups_per_row = cols / group;
            for (r, slot) in out.iter_mut().enumerate() {
                let row = &values[r * cols..(r + 1) * cols];
                let row_scales = &scales[r * groups_per_row..(r + 1) * groups_per_row];
                let mut sum = 0.0f32;
                for (g, chunk) in row.chunks_exact(*group).enumerate() {
                    let xs = &x[g * group..(g + 1) * group];
                    let mut acc = 0.0f32;
                    for (j, &v) in chunk.iter().enumerate() {
                        acc += v as f32 * xs[j];
                    }
                    sum += acc * row_scales[g];
                }
                *slot = sum;
            }
        }
    }
}

/// Dequantize a row-aligned INT8 slice into `out`.
pub fn dequant_row(values: &[i8], scales: &[f32], group: usize, out: &mut [f32]) {
    debug_assert_eq!(values.len(), out.len());
    debug_assert_eq!(values.len() % group, 0);
    for (g, chunk) in values.chunks_exact(group).enumerate() {
        let s = scales[g];
        for (j, &v) in chunk.iter().enumerate() {
            out[g * group + j] = v as f32 * s;
        }
    }
}

/// Copy a gain vector out of a weight reference, dequantizing if needed.
pub fn load_vector(m: &MatRef<'_>, out: &mut [f32]) {
    match m {
        MatRef::F32(data) => out.copy_from_slice(data),
        MatRef::Q8 {
            values,
            scales,
            group,
        } => dequant_row(values, scales, *group, out),
    }
}

/// Rotary position embedding applied in place to the query (length dim)
/// and key (length kv_dim) vectors for one position.
pub fn rope(q: &mut [f32], k: &mut [f32], pos: usize, head_size: usize) {
    let mut i = 0;
    while i < q.len() {
        let head_dim = i % head_size;
        let freq = 1.0f32 / 10000f32.powf(head_dim as f32 / head_size as f32);
        let val = pos as f32 * freq;
        let cos = val.cos();
        let sin = val.sin();
        let (q0, q1) = (q[i], q[i + 1]);
        q[i] = q0 * cos - q1 * sin;
        q[i + 1] = q0 * sin + q1 * cos;
        if i + 1 < k.len() {
            let (k0, k1) = (k[i], k[i + 1]);
            k[i] = k0 * cos - k1 * sin;
            k[i + 1] = k0 * sin + k1 * cos;
        }
        i += 2;
    }
}

/// xorshift64* generator; bit-stable across platforms and releases, which
/// keeps seeded sampling and mock programs reproducible.
#[derive(Debug, Clone)]
pub struct Rng64(u64);

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        // State must be non-zero.
        Self(if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed })
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1).
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u64 << 24) as f32
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }
}

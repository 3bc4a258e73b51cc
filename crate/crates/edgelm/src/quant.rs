//! Absmax group-wise INT8 quantization, memory accounting, and the ELMQ
//! quantized checkpoint format.
//!
//! Each group of `n` consecutive weights shares one FP32 scale,
//! `scale = max(|group|) / 127`; stored values are
//! `round_half_away_from_zero(127 * w / max(|group|))` clamped to
//! [-127, 127]. The ratio is evaluated in f64 so the stored integers match
//! the real-number value of the formula (and are exactly invariant under
//! rescaling of the input).
//!
//! ELMQ layout: `"ELMQ" | version u32 | config (7 x i32)` then, in roster
//! order, one record per tensor:
//! `{class u8, group_size u32, n_elements u64, INT8 payload, FP32 scales}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    expect_magic, layer_tensor_ids, read_config_header, read_u32, read_u64, roster,
    write_config_header, Checkpoint, ModelConfig, TensorClass, TensorId,
};
use crate::tensor::TensorF32;

pub const ELMQ_MAGIC: [u8; 4] = *b"ELMQ";
pub const ELMQ_VERSION: u32 = 1;
/// Bytes before the first tensor record: magic + version + 7 x i32.
pub const ELMQ_HEADER_BYTES: u64 = 4 + 4 + 7 * 4;
/// Bytes of each per-tensor record header: class u8 + group u32 + n u64.
pub const ELMQ_RECORD_HEADER_BYTES: u64 = 1 + 4 + 8;

/// INT8 values plus one FP32 scale per group.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    group_size: usize,
    values: Vec<i8>,
    scales: Vec<f32>,
}

impl QuantTensor {
    pub fn from_parts(
        shape: Vec<usize>,
        group_size: usize,
        values: Vec<i8>,
        scales: Vec<f32>,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "values length {} != shape product {}",
                values.len(),
                n
            )));
        }
        if group_size == 0 || !n.is_multiple_of(group_size) {
            return Err(Error::Shape(format!(
                "group size {group_size} does not divide element count {n}"
            )));
        }
        if scales.len() != n / group_size {
            return Err(Error::Shape(format!(
                "expected {} scales, got {}",
                n / group_size,
                scales.len()
            )));
        }
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Numeric("scales must be finite and >= 0".into()));
        }
        Ok(Self {
            shape,
            group_size,
            values,
            scales,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Serialized payload bytes: one byte per value + four per scale.
    pub fn payload_bytes(&self) -> u64 {
        self.values.len() as u64 + self.scales.len() as u64 * 4
    }
}

/// Quantize a tensor with one scale per `group_size` consecutive elements.
pub fn quantize(t: &TensorF32, group_size: usize) -> Result<QuantTensor> {
    if !t.is_finite() {
        return Err(Error::Numeric("cannot quantize non-finite input".into()));
    }
    let n = t.len();
    if group_size == 0 || !n.is_multiple_of(group_size) {
        return Err(Error::Shape(format!(
            "group size {group_size} does not divide element count {n}"
        )));
    }
    let mut values = vec![0i8; n];
    let mut scales = Vec::with_capacity(n / group_size);
    for (g, group) in t.data().chunks_exact(group_size).enumerate() {
        let amax = group.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if amax == 0.0 {
            scales.push(0.0);
            continue; // values already zero
        }
        scales.push(amax / 127.0);
        let amax = amax as f64;
        for (j, &w) in group.iter().enumerate() {
            let q = (127.0 * (w as f64 / amax)).round();
            values[g * group_size + j] = q.clamp(-127.0, 127.0) as i8;
        }
    }
    QuantTensor::from_parts(t.shape().to_vec(), group_size, values, scales)
}

/// Reconstruct FP32 weights as `value * scale`.
pub fn dequantize(q: &QuantTensor) -> TensorF32 {
    let mut data = Vec::with_capacity(q.len());
    for (g, group) in q.values.chunks_exact(q.group_size).enumerate() {
        let scale = q.scales[g];
        data.extend(group.iter().map(|&v| v as f32 * scale));
    }
    TensorF32::new(q.shape.clone(), data).expect("shape preserved by construction")
}

/// Max-abs and L1 reconstruction error between a tensor and its
/// dequantized counterpart.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ReconstructionError {
    pub max_abs: f32,
    pub l1: f32,
}

pub fn reconstruction_error(orig: &TensorF32, q: &QuantTensor) -> Result<ReconstructionError> {
    if orig.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "original shape {:?} != quantized shape {:?}",
            orig.shape(),
            q.shape()
        )));
    }
    let deq = dequantize(q);
    let mut max_abs = 0.0f32;
    let mut l1 = 0.0f64;
    for (&a, &b) in orig.data().iter().zip(deq.data()) {
        let d = (a - b).abs();
        max_abs = max_abs.max(d);
        l1 += d as f64;
    }
    Ok(ReconstructionError {
        max_abs,
        l1: l1 as f32,
    })
}

/// Per-class quantization group sizes. The 7B reference byte counts assume
/// group 16 on the attention projections and 64 everywhere else, so those
/// are the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSizes {
    pub attention: usize,
    pub other: usize,
}

impl Default for GroupSizes {
    fn default() -> Self {
        Self {
            attention: 16,
            other: 64,
        }
    }
}

impl GroupSizes {
    pub fn uniform(n: usize) -> Self {
        Self {
            attention: n,
            other: n,
        }
    }

    pub fn for_class(&self, class: TensorClass) -> usize {
        match class {
            TensorClass::Attention => self.attention,
            _ => self.other,
        }
    }
}

/// One aggregated row of the memory table (all layers of a tensor family).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MemoryRow {
    pub name: String,
    pub fp32_bytes: u64,
    pub int8_bytes: u64,
}

/// Byte accounting for a full model at FP32 and group-quantized INT8.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MemoryReport {
    pub rows: Vec<MemoryRow>,
    pub total_fp32: u64,
    pub total_int8: u64,
    /// total_int8 / (total_fp32 / 4).
    pub ratio_vs_fp32_quarter: f64,
}

/// The twelve table rows, in display order. Element counts aggregate over
/// all layers (`n_layers` copies of each per-layer tensor).
fn table_rows(c: &ModelConfig) -> [(&'static str, TensorClass, u64); 12] {
    let l = c.n_layers as u64;
    let dim = c.dim as u64;
    let hidden = c.hidden_dim as u64;
    let kv = c.kv_dim() as u64;
    let vocab = c.vocab_size as u64;
    [
        ("token_embedding", TensorClass::Embedding, vocab * dim),
        ("w_w", TensorClass::Attention, l * dim * dim),
        ("w_x", TensorClass::Attention, l * kv * dim),
        ("w_y", TensorClass::Attention, l * kv * dim),
        ("w_z", TensorClass::Attention, l * dim * dim),
        ("rms_att", TensorClass::RmsNorm, l * dim),
        ("rms_ffn", TensorClass::RmsNorm, l * dim),
        ("w_a", TensorClass::FeedForward, l * hidden * dim),
        ("w_b", TensorClass::FeedForward, l * dim * hidden),
        ("w_c", TensorClass::FeedForward, l * hidden * dim),
        ("rms_final", TensorClass::RmsNorm, dim),
        ("w_final", TensorClass::Output, vocab * dim),
    ]
}

/// Pure arithmetic: FP32 and INT8 byte counts per tensor family, plus
/// totals and the INT8-vs-quarter-FP32 ratio. No weight memory is touched.
pub fn account_memory(config: &ModelConfig, groups: &GroupSizes) -> Result<MemoryReport> {
    config.validate().map_err(|e| match e {
        Error::Format(m) => Error::Shape(m),
        other => other,
    })?;
    let mut rows = Vec::with_capacity(12);
    let mut total_fp32 = 0u64;
    let mut total_int8 = 0u64;
    for (name, class, elems) in table_rows(config) {
        let g = groups.for_class(class) as u64;
        if g == 0 || elems % g != 0 {
            return Err(Error::Shape(format!(
                "group size {g} does not divide {name} element count {elems}"
            )));
        }
        let fp32 = elems * 4;
        let int8 = elems + (elems / g) * 4;
        total_fp32 += fp32;
        total_int8 += int8;
        rows.push(MemoryRow {
            name: name.to_string(),
            fp32_bytes: fp32,
            int8_bytes: int8,
        });
    }
    Ok(MemoryReport {
        rows,
        total_fp32,
        total_int8,
        ratio_vs_fp32_quarter: total_int8 as f64 / (total_fp32 as f64 / 4.0),
    })
}

/// INT8 bytes (payload, record headers excluded) for one tensor.
fn int8_bytes_for(elems: u64, group: u64) -> u64 {
    elems + (elems / group) * 4
}

/// Closed-form peak resident weight bytes for a window-streamed INT8 model:
/// embeddings + final norm and projection stay resident, `window` layers
/// are held at a time. Matches `StreamingWeights::peak_weight_bytes`.
pub fn streaming_peak_int8_bytes(config: &ModelConfig, groups: &GroupSizes, window: usize) -> u64 {
    let per_tensor = |id: TensorId| {
        int8_bytes_for(
            id.elem_count(config) as u64,
            groups.for_class(id.class()) as u64,
        )
    };
    let resident = per_tensor(TensorId::TokenEmbedding)
        + per_tensor(TensorId::RmsFinal)
        + per_tensor(TensorId::WFinal);
    let layer: u64 = layer_tensor_ids(0).iter().map(|&id| per_tensor(id)).sum();
    resident + window.min(config.n_layers) as u64 * layer
}

/// FP32 streaming counterpart.
pub fn streaming_peak_fp32_bytes(config: &ModelConfig, window: usize) -> u64 {
    let per_tensor = |id: TensorId| id.elem_count(config) as u64 * 4;
    let resident = per_tensor(TensorId::TokenEmbedding)
        + per_tensor(TensorId::RmsFinal)
        + per_tensor(TensorId::WFinal);
    let layer: u64 = layer_tensor_ids(0).iter().map(|&id| per_tensor(id)).sum();
    resident + window.min(config.n_layers) as u64 * layer
}

/// A fully quantized checkpoint; the in-memory form of one ELMQ file.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCheckpoint {
    config: ModelConfig,
    groups: GroupSizes,
    /// Tensors in roster order.
    tensors: Vec<QuantTensor>,
}

impl QuantizedCheckpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn groups(&self) -> &GroupSizes {
        &self.groups
    }

    pub fn tensor(&self, id: TensorId) -> &QuantTensor {
        &self.tensors[id.roster_index(&self.config)]
    }

    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &QuantTensor)> {
        roster(&self.config).into_iter().zip(self.tensors.iter())
    }

    /// Total INT8-format payload bytes (values + scales, headers excluded).
    pub fn payload_bytes(&self) -> u64 {
        self.tensors.iter().map(|t| t.payload_bytes()).sum()
    }

    /// FNV-1a over values and scale bytes; the streamed and resident forms
    /// of the same file hash identically.
    pub fn payload_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for t in &self.tensors {
            for v in t.values() {
                eat(*v as u8);
            }
            for s in t.scales() {
                for b in s.to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }
}

/// Quantize every roster tensor of an FP32 checkpoint.
///
/// Requires each group to divide its tensor's row length so the INT8
/// matmul and per-row embedding dequantization never straddle rows.
pub fn quantize_checkpoint(ckpt: &Checkpoint, groups: GroupSizes) -> Result<QuantizedCheckpoint> {
    let config = *ckpt.config();
    let mut tensors = Vec::new();
    for (id, t) in ckpt.iter() {
        let g = groups.for_class(id.class());
        let cols = *t.shape().last().expect("roster tensors are non-empty");
        if g == 0 || cols % g != 0 {
            return Err(Error::Shape(format!(
                "group size {g} does not divide row length {cols} of {}",
                id.name()
            )));
        }
        tensors.push(quantize(t, g)?);
    }
    Ok(QuantizedCheckpoint {
        config,
        groups,
        tensors,
    })
}

/// Dequantize every tensor back to an FP32 checkpoint.
pub fn dequantize_checkpoint(q: &QuantizedCheckpoint) -> Result<Checkpoint> {
    let tensors = q.iter().map(|(_, t)| dequantize(t)).collect();
    Checkpoint::new(q.config, tensors)
}

pub fn write_quantized(q: &QuantizedCheckpoint, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ELMQ_MAGIC)?;
    w.write_all(&ELMQ_VERSION.to_le_bytes())?;
    write_config_header(&mut w, &q.config)?;
    for (id, t) in q.iter() {
        w.write_all(&[id.class().code()])?;
        w.write_all(&(t.group_size() as u32).to_le_bytes())?;
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        // i8 -> u8 is a bit-level reinterpretation.
        let bytes: Vec<u8> = t.values().iter().map(|&v| v as u8).collect();
        w.write_all(&bytes)?;
        crate::model::write_f32_slice(&mut w, t.scales())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_quantized(path: &Path) -> Result<QuantizedCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, &ELMQ_MAGIC, "ELMQ")?;
    let version = read_u32(&mut r, "version")?;
    if version != ELMQ_VERSION {
        return Err(Error::Format(format!(
            "unsupported ELMQ version {version} (expected {ELMQ_VERSION})"
        )));
    }
    let config = read_config_header(&mut r)?;
    let mut tensors = Vec::new();
    let mut groups = GroupSizes::default();
    for id in roster(&config) {
        let mut class_byte = [0u8; 1];
        r.read_exact(&mut class_byte).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Truncation(format!("missing record for {}", id.name()))
            } else {
                Error::Io(e)
            }
        })?;
        let class = TensorClass::from_code(class_byte[0])?;
        if class != id.class() {
            return Err(Error::Format(format!(
                "record class {:?} does not match roster tensor {}",
                class,
                id.name()
            )));
        }
        let group = read_u32(&mut r, "group size")? as usize;
        let n = read_u64(&mut r, "element count")? as usize;
        if n != id.elem_count(&config) {
            return Err(Error::Shape(format!(
                "{} declares {} elements, config implies {}",
                id.name(),
                n,
                id.elem_count(&config)
            )));
        }
        let raw = crate::model::read_bytes(&mut r, n, &id.name())?;
        let values: Vec<i8> = raw.into_iter().map(|b| b as i8).collect();
        if group == 0 || !n.is_multiple_of(group) {
            return Err(Error::Shape(format!(
                "group size {group} does not divide {} elements of {}",
                n,
                id.name()
            )));
        }
        let scales = crate::model::read_f32_vec(&mut r, n / group, "scales")?;
        match class {
            TensorClass::Attention => groups.attention = group,
            _ => groups.other = group,
        }
        tensors.push(QuantTensor::from_parts(
            id.shape(&config),
            group,
            values,
            scales,
        )?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(
            "trailing bytes after the final tensor record".into(),
        ));
    }
    Ok(QuantizedCheckpoint {
        config,
        groups,
        tensors,
    })
}

/// Read only magic + config from an ELMQ file, plus per-class group sizes
/// when records are present. Header-only files fall back to the default
/// group sizes, which is enough to print the memory table.
pub fn load_quantized_header(path: &Path) -> Result<(ModelConfig, GroupSizes)> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, &ELMQ_MAGIC, "ELMQ")?;
    let version = read_u32(&mut r, "version")?;
    if version != ELMQ_VERSION {
        return Err(Error::Format(format!("unsupported ELMQ version {version}")));
    }
    let config = read_config_header(&mut r)?;
    let mut groups = GroupSizes::default();
    // Best-effort scan of record headers; stop at EOF.
    let mut seen_attention = false;
    let mut seen_other = false;
    for id in roster(&config) {
        let mut class_byte = [0u8; 1];
        match r.read(&mut class_byte) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(e.into()),
        }
        let class = TensorClass::from_code(class_byte[0])?;
        let group = read_u32(&mut r, "group size")? as usize;
        let n = read_u64(&mut r, "element count")?;
        match class {
            TensorClass::Attention => {
                groups.attention = group;
                seen_attention = true;
            }
            _ => {
                groups.other = group;
                seen_other = true;
            }
        }
        if seen_attention && seen_other {
            break;
        }
        let scales = if group == 0 { 0 } else { n / group as u64 };
        std::io::copy(&mut (&mut r).take(n + scales * 4), &mut std::io::sink())?;
        let _ = id;
    }
    Ok((config, groups))
}

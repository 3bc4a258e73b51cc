//! Model configuration, tensor roster, and the ELMC FP32 checkpoint format.
//!
//! An ELMC file is a flat header followed by row-major FP32 tensors in a
//! fixed roster order, grouped per layer so a streaming reader can seek to
//! any layer's weights in O(1):
//!
//! ```text
//! "ELMC" | version u32 | dim, hidden_dim, n_layers, n_heads, n_kv_heads,
//! vocab_size, seq_len (7 x i32) | token_embedding | per layer: rms_att,
//! w_w, w_x, w_y, w_z, rms_ffn, w_a, w_b, w_c | rms_final | w_final
//! ```
//!
//! All integers are little-endian; floats are raw little-endian IEEE 754.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

pub const ELMC_MAGIC: [u8; 4] = *b"ELMC";
pub const ELMC_VERSION: u32 = 1;
/// Bytes before the first tensor: magic + version + 7 x i32.
pub const ELMC_HEADER_BYTES: u64 = 4 + 4 + 7 * 4;

/// Transformer dimensions shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
}

impl ModelConfig {
    /// The Llama-2-7B preset.
    pub fn llama2_7b() -> Self {
        Self {
            dim: 4096,
            hidden_dim: 11008,
            n_layers: 32,
            n_heads: 32,
            n_kv_heads: 32,
            vocab_size: 32000,
            seq_len: 4096,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("dim", self.dim),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Format(format!("config field {name} must be > 0")));
            }
        }
        if !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::Format(format!(
                "dim {} not divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::Format(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        Ok(())
    }

    pub fn head_size(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Width of the key/value projections; equals `dim` when every query
    /// head has its own key/value head.
    pub fn kv_dim(&self) -> usize {
        self.head_size() * self.n_kv_heads
    }
}

/// Broad tensor family; drives per-class quantization group sizes and is
/// stored in each ELMQ tensor record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorClass {
    Embedding,
    Attention,
    RmsNorm,
    FeedForward,
    Output,
}

impl TensorClass {
    pub fn code(self) -> u8 {
        match self {
            TensorClass::Embedding => 0,
            TensorClass::Attention => 1,
            TensorClass::RmsNorm => 2,
            TensorClass::FeedForward => 3,
            TensorClass::Output => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => TensorClass::Embedding,
            1 => TensorClass::Attention,
            2 => TensorClass::RmsNorm,
            3 => TensorClass::FeedForward,
            4 => TensorClass::Output,
            other => return Err(Error::Format(format!("unknown tensor class code {other}"))),
        })
    }
}

/// Identifier of one tensor in the checkpoint roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorId {
    TokenEmbedding,
    RmsAtt(usize),
    /// Query projection.
    Ww(usize),
    /// Key projection.
    Wx(usize),
    /// Value projection.
    Wy(usize),
    /// Attention output projection.
    Wz(usize),
    RmsFfn(usize),
    /// FFN gate projection.
    Wa(usize),
    /// FFN down projection.
    Wb(usize),
    /// FFN up projection.
    Wc(usize),
    RmsFinal,
    WFinal,
}

impl TensorId {
    pub fn shape(&self, c: &ModelConfig) -> Vec<usize> {
        match self {
            TensorId::TokenEmbedding | TensorId::WFinal => vec![c.vocab_size, c.dim],
            TensorId::RmsAtt(_) | TensorId::RmsFfn(_) | TensorId::RmsFinal => vec![c.dim],
            TensorId::Ww(_) | TensorId::Wz(_) => vec![c.dim, c.dim],
            TensorId::Wx(_) | TensorId::Wy(_) => vec![c.kv_dim(), c.dim],
            TensorId::Wa(_) | TensorId::Wc(_) => vec![c.hidden_dim, c.dim],
            TensorId::Wb(_) => vec![c.dim, c.hidden_dim],
        }
    }

    pub fn elem_count(&self, c: &ModelConfig) -> usize {
        self.shape(c).iter().product()
    }

    pub fn class(&self) -> TensorClass {
        match self {
            TensorId::TokenEmbedding => TensorClass::Embedding,
            TensorId::Ww(_) | TensorId::Wx(_) | TensorId::Wy(_) | TensorId::Wz(_) => {
                TensorClass::Attention
            }
            TensorId::RmsAtt(_) | TensorId::RmsFfn(_) | TensorId::RmsFinal => TensorClass::RmsNorm,
            TensorId::Wa(_) | TensorId::Wb(_) | TensorId::Wc(_) => TensorClass::FeedForward,
            TensorId::WFinal => TensorClass::Output,
        }
    }

    pub fn name(&self) -> String {
        match self {
            TensorId::TokenEmbedding => "token_embedding".into(),
            TensorId::RmsAtt(l) => format!("rms_att[{l}]"),
            TensorId::Ww(l) => format!("w_w[{l}]"),
            TensorId::Wx(l) => format!("w_x[{l}]"),
            TensorId::Wy(l) => format!("w_y[{l}]"),
            TensorId::Wz(l) => format!("w_z[{l}]"),
            TensorId::RmsFfn(l) => format!("rms_ffn[{l}]"),
            TensorId::Wa(l) => format!("w_a[{l}]"),
            TensorId::Wb(l) => format!("w_b[{l}]"),
            TensorId::Wc(l) => format!("w_c[{l}]"),
            TensorId::RmsFinal => "rms_final".into(),
            TensorId::WFinal => "w_final".into(),
        }
    }

    /// Parse a roster name such as `w_a[3]` or `token_embedding`.
    pub fn parse(name: &str) -> Result<Self> {
        let err = || Error::Format(format!("unknown tensor name `{name}`"));
        match name {
            "token_embedding" => return Ok(TensorId::TokenEmbedding),
            "rms_final" => return Ok(TensorId::RmsFinal),
            "w_final" => return Ok(TensorId::WFinal),
            _ => {}
        }
        let (base, rest) = name.split_once('[').ok_or_else(err)?;
        let idx: usize = rest
            .strip_suffix(']')
            .ok_or_else(err)?
            .parse()
            .map_err(|_| err())?;
        Ok(match base {
            "rms_att" => TensorId::RmsAtt(idx),
            "w_w" => TensorId::Ww(idx),
            "w_x" => TensorId::Wx(idx),
            "w_y" => TensorId::Wy(idx),
            "w_z" => TensorId::Wz(idx),
            "rms_ffn" => TensorId::RmsFfn(idx),
            "w_a" => TensorId::Wa(idx),
            "w_b" => TensorId::Wb(idx),
            "w_c" => TensorId::Wc(idx),
            _ => return Err(err()),
        })
    }

    /// Position of this tensor within the roster order.
    pub fn roster_index(&self, c: &ModelConfig) -> usize {
        match self {
            TensorId::TokenEmbedding => 0,
            TensorId::RmsAtt(l) => 1 + l * 9,
            TensorId::Ww(l) => 2 + l * 9,
            TensorId::Wx(l) => 3 + l * 9,
            TensorId::Wy(l) => 4 + l * 9,
            TensorId::Wz(l) => 5 + l * 9,
            TensorId::RmsFfn(l) => 6 + l * 9,
            TensorId::Wa(l) => 7 + l * 9,
            TensorId::Wb(l) => 8 + l * 9,
            TensorId::Wc(l) => 9 + l * 9,
            TensorId::RmsFinal => 1 + c.n_layers * 9,
            TensorId::WFinal => 2 + c.n_layers * 9,
        }
    }
}

/// The nine per-layer tensors, in file order.
pub fn layer_tensor_ids(layer: usize) -> [TensorId; 9] {
    [
        TensorId::RmsAtt(layer),
        TensorId::Ww(layer),
        TensorId::Wx(layer),
        TensorId::Wy(layer),
        TensorId::Wz(layer),
        TensorId::RmsFfn(layer),
        TensorId::Wa(layer),
        TensorId::Wb(layer),
        TensorId::Wc(layer),
    ]
}

/// Full roster in file order: 2 + 9 * n_layers + 1 tensors.
pub fn roster(config: &ModelConfig) -> Vec<TensorId> {
    let mut ids = Vec::with_capacity(3 + config.n_layers * 9);
    ids.push(TensorId::TokenEmbedding);
    for l in 0..config.n_layers {
        ids.extend_from_slice(&layer_tensor_ids(l));
    }
    ids.push(TensorId::RmsFinal);
    ids.push(TensorId::WFinal);
    ids
}

/// FP32 weights plus their configuration; the in-memory form of one ELMC file.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    config: ModelConfig,
    /// Tensors in roster order.
    tensors: Vec<TensorF32>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, tensors: Vec<TensorF32>) -> Result<Self> {
        config.validate()?;
        let ids = roster(&config);
        if tensors.len() != ids.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                ids.len(),
                tensors.len()
            )));
        }
        for (id, t) in ids.iter().zip(&tensors) {
            if t.shape() != id.shape(&config).as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    id.name(),
                    t.shape(),
                    id.shape(&config)
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    /// All-zero checkpoint for the given config.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = roster(&config)
            .iter()
            .map(|id| TensorF32::zeros(id.shape(&config)))
            .collect();
        Self::new(config, tensors)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensor(&self, id: TensorId) -> &TensorF32 {
        &self.tensors[id.roster_index(&self.config)]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut TensorF32 {
        &mut self.tensors[id.roster_index(&self.config)]
    }

    /// Tensors paired with their roster ids, in file order.
    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &TensorF32)> {
        roster(&self.config).into_iter().zip(self.tensors.iter())
    }

    /// Total FP32 payload bytes (excluding the header).
    pub fn payload_bytes(&self) -> u64 {
        self.tensors.iter().map(|t| t.byte_len()).sum()
    }

    /// FNV-1a over the raw little-endian weight bytes. Used to prove the
    /// feedback loop never writes into pre-trained weights.
    pub fn payload_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncation(format!(
                    "{what}: needed {} more bytes",
                    buf.len() - filled
                )))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_i32(r: &mut impl Read, what: &str) -> Result<i32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(i32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read, what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

/// Read `n` little-endian f32 values.
pub(crate) fn read_f32_vec(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact_or(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_bytes(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut bytes = vec![0u8; n];
    read_exact_or(r, &mut bytes, what)?;
    Ok(bytes)
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4], kind: &str) -> Result<()> {
    let mut got = [0u8; 4];
    read_exact_or(r, &mut got, "magic")?;
    if &got != magic {
        return Err(Error::Format(format!(
            "not an {kind} file: magic {:?} != {:?}",
            got, magic
        )));
    }
    Ok(())
}

pub(crate) fn write_f32_slice(w: &mut impl Write, data: &[f32]) -> Result<()> {
    // Chunked to keep write calls large without allocating the full payload.
    let mut buf = Vec::with_capacity(64 * 1024);
    for chunk in data.chunks(16 * 1024) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub(crate) fn read_config_header(r: &mut impl Read) -> Result<ModelConfig> {
    let mut vals = [0i32; 7];
    for (i, v) in vals.iter_mut().enumerate() {
        *v = read_i32(r, &format!("config field {i}"))?;
    }
    if vals.iter().any(|&v| v <= 0) {
        return Err(Error::Format(format!(
            "config header has non-positive field: {vals:?}"
        )));
    }
    let config = ModelConfig {
        dim: vals[0] as usize,
        hidden_dim: vals[1] as usize,
        n_layers: vals[2] as usize,
        n_heads: vals[3] as usize,
        n_kv_heads: vals[4] as usize,
        vocab_size: vals[5] as usize,
        seq_len: vals[6] as usize,
    };
    config.validate()?;
    Ok(config)
}

pub(crate) fn write_config_header(w: &mut impl Write, c: &ModelConfig) -> Result<()> {
    for v in [
        c.dim,
        c.hidden_dim,
        c.n_layers,
        c.n_heads,
        c.n_kv_heads,
        c.vocab_size,
        c.seq_len,
    ] {
        w.write_all(&(v as i32).to_le_bytes())?;
    }
    Ok(())
}

/// Write a checkpoint as an ELMC file.
pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ELMC_MAGIC)?;
    w.write_all(&ELMC_VERSION.to_le_bytes())?;
    write_config_header(&mut w, ckpt.config())?;
    for (_, t) in ckpt.iter() {
        write_f32_slice(&mut w, t.data())?;
    }
    w.flush()?;
    Ok(())
}

/// Load an ELMC file; bit-exact with respect to what was written.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, &ELMC_MAGIC, "ELMC")?;
    let version = read_u32(&mut r, "version")?;
    if version != ELMC_VERSION {
        return Err(Error::Format(format!(
            "unsupported ELMC version {version} (expected {ELMC_VERSION})"
        )));
    }
    let config = read_config_header(&mut r)?;
    let mut tensors = Vec::new();
    for id in roster(&config) {
        let shape = id.shape(&config);
        let n = id.elem_count(&config);
        let data = read_f32_vec(&mut r, n, &id.name())?;
        tensors.push(TensorF32::new(shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(
            "trailing bytes after the final roster tensor".into(),
        ));
    }
    Checkpoint::new(config, tensors)
}

/// Byte offset of layer `l`'s first tensor inside an ELMC file.
pub fn elmc_layer_offset(config: &ModelConfig, layer: usize) -> u64 {
    let emb = TensorId::TokenEmbedding.elem_count(config) as u64 * 4;
    let per_layer: u64 = layer_tensor_ids(0)
        .iter()
        .map(|id| id.elem_count(config) as u64 * 4)
        .sum();
    ELMC_HEADER_BYTES + emb + layer as u64 * per_layer
}

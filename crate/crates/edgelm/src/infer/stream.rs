//! Segmented execution: layer weights are read from disk a window at a
//! time, so resident weight memory stays at embeddings + window layers +
//! the final projection. Embeddings and the output head are needed every
//! token and stay loaded; the nine per-layer tensors are fetched on demand.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{
    layer_tensor_ids, read_config_header, read_u32, read_u64, roster, ModelConfig, TensorClass,
    TensorId, ELMC_MAGIC,
};
use crate::quant::{ELMQ_MAGIC, ELMQ_VERSION};

use super::{LayerView, MatRef, WeightSource};

/// Where one tensor's payload lives inside the weight file.
#[derive(Debug, Clone)]
struct TensorLoc {
    elems: usize,
    kind: LocKind,
}

#[derive(Debug, Clone)]
enum LocKind {
    F32 { data_off: u64 },
    Q8 { values_off: u64, scales_off: u64, group: usize },
}

/// An owned copy of one tensor's payload.
#[derive(Debug, Clone)]
enum OwnedTensor {
    F32(Vec<f32>),
    Q8 {
        values: Vec<i8>,
        scales: Vec<f32>,
        group: usize,
    },
}

impl OwnedTensor {
    fn as_ref(&self) -> MatRef<'_> {
        match self {
            OwnedTensor::F32(v) => MatRef::F32(v),
            OwnedTensor::Q8 {
                values,
                scales,
                group,
            } => MatRef::Q8 {
                values,
                scales,
                group: *group,
            },
        }
    }

    fn byte_size(&self) -> u64 {
        match self {
            OwnedTensor::F32(v) => v.len() as u64 * 4,
            OwnedTensor::Q8 { values, scales, .. } => values.len() as u64 + scales.len() as u64 * 4,
        }
    }
}

/// Weight source that keeps at most `window` layers resident.
pub struct StreamingWeights {
    file: File,
    config: ModelConfig,
    locs: Vec<TensorLoc>,
    embedding: OwnedTensor,
    rms_final: OwnedTensor,
    w_final: OwnedTensor,
    window: usize,
    buf_layers: Vec<[OwnedTensor; 9]>,
    buf_start: usize,
    resident_bytes: u64,
    peak_bytes: u64,
}

impl StreamingWeights {
    /// Open an ELMC or ELMQ file for windowed execution.
    pub fn open(path: &Path, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Range("stream window must be >= 1".into()));
        }
        let mut file = File::open(path)?;
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)
            .map_err(|_| Error::Truncation("file shorter than its magic".into()))?;
        let (config, locs) = match &magic {
            m if *m == ELMC_MAGIC => Self::index_elmc(&mut file)?,
            m if *m == ELMQ_MAGIC => Self::index_elmq(&mut file)?,
            other => {
                return Err(Error::Format(format!(
                    "expected an ELMC or ELMQ weight file, magic was {other:?}"
                )))
            }
        };

        let ids = roster(&config);
        let pos_of = |id: TensorId| id.roster_index(&config);
        let embedding = Self::read_tensor(&mut file, &locs[pos_of(TensorId::TokenEmbedding)])?;
        let rms_final = Self::read_tensor(&mut file, &locs[pos_of(TensorId::RmsFinal)])?;
        let w_final = Self::read_tensor(&mut file, &locs[pos_of(TensorId::WFinal)])?;
        debug_assert_eq!(ids.len(), locs.len());

        let resident_bytes = embedding.byte_size() + rms_final.byte_size() + w_final.byte_size();
        Ok(Self {
            file,
            config,
            locs,
            embedding,
            rms_final,
            w_final,
            window,
            buf_layers: Vec::new(),
            buf_start: usize::MAX,
            resident_bytes,
            peak_bytes: resident_bytes,
        })
    }

    fn index_elmc(file: &mut File) -> Result<(ModelConfig, Vec<TensorLoc>)> {
        let version = read_u32(file, "version")?;
        if version != crate::model::ELMC_VERSION {
            return Err(Error::Format(format!("unsupported ELMC version {version}")));
        }
        let config = read_config_header(file)?;
        let mut off = crate::model::ELMC_HEADER_BYTES;
        let mut locs = Vec::new();
        for id in roster(&config) {
            let elems = id.elem_count(&config);
            locs.push(TensorLoc {
                elems,
                kind: LocKind::F32 { data_off: off },
            });
            off += elems as u64 * 4;
        }
        let actual = file.metadata()?.len();
        if actual < off {
            return Err(Error::Truncation(format!(
                "file is {actual} bytes, roster implies {off}"
            )));
        }
        Ok((config, locs))
    }

    fn index_elmq(file: &mut File) -> Result<(ModelConfig, Vec<TensorLoc>)> {
        let version = read_u32(file, "version")?;
        if version != ELMQ_VERSION {
            return Err(Error::Format(format!("unsupported ELMQ version {version}")));
        }
        let config = read_config_header(file)?;
        let mut locs = Vec::new();
        for id in roster(&config) {
            let mut class_byte = [0u8; 1];
            file.read_exact(&mut class_byte).map_err(|_| {
                Error::Truncation(format!("missing record header for {}", id.name()))
            })?;
            let class = TensorClass::from_code(class_byte[0])?;
            if class != id.class() {
                return Err(Error::Format(format!(
                    "record class {:?} does not match roster tensor {}",
                    class,
                    id.name()
                )));
            }
            let group = read_u32(file, "group size")? as usize;
            let elems = read_u64(file, "element count")? as usize;
            if elems != id.elem_count(&config) {
                return Err(Error::Shape(format!(
                    "{} declares {} elements, config implies {}",
                    id.name(),
                    elems,
                    id.elem_count(&config)
                )));
            }
            if group == 0 || !elems.is_multiple_of(group) {
                return Err(Error::Shape(format!(
                    "group {group} does not divide {} elements of {}",
                    elems,
                    id.name()
                )));
            }
            let values_off = file.stream_position()?;
            let scales_off = values_off + elems as u64;
            locs.push(TensorLoc {
                elems,
                kind: LocKind::Q8 {
                    values_off,
                    scales_off,
                    group,
                },
            });
            file.seek(SeekFrom::Start(scales_off + (elems / group) as u64 * 4))?;
        }
        let end = file.stream_position()?;
        if file.metadata()?.len() < end {
            return Err(Error::Truncation("tensor records exceed file size".into()));
        }
        Ok((config, locs))
    }

    fn read_tensor(file: &mut File, loc: &TensorLoc) -> Result<OwnedTensor> {
        match &loc.kind {
            LocKind::F32 { data_off } => {
                file.seek(SeekFrom::Start(*data_off))?;
                let mut bytes = vec![0u8; loc.elems * 4];
                file.read_exact(&mut bytes).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        Error::Truncation("tensor payload ends early".into())
                    } else {
                        Error::Io(e)
                    }
                })?;
                Ok(OwnedTensor::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ))
            }
            LocKind::Q8 {
                values_off,
                scales_off,
                group,
            } => {
                file.seek(SeekFrom::Start(*values_off))?;
                let mut raw = vec![0u8; loc.elems];
                file.read_exact(&mut raw).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        Error::Truncation("INT8 payload ends early".into())
                    } else {
                        Error::Io(e)
                    }
                })?;
                let values: Vec<i8> = raw.into_iter().map(|b| b as i8).collect();
                file.seek(SeekFrom::Start(*scales_off))?;
                let mut sbytes = vec![0u8; loc.elems / group * 4];
                file.read_exact(&mut sbytes).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        Error::Truncation("scale payload ends early".into())
                    } else {
                        Error::Io(e)
                    }
                })?;
                let scales = sbytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Ok(OwnedTensor::Q8 {
                    values,
                    scales,
                    group: *group,
                })
            }
        }
    }

    /// Load the chunk of layers starting at `first`.
    fn load_chunk(&mut self, first: usize) -> Result<()> {
        let count = self.window.min(self.config.n_layers - first);
        let mut layers = Vec::with_capacity(count);
        for l in first..first + count {
            let ids = layer_tensor_ids(l);
            let mut owned = Vec::with_capacity(9);
            for id in ids {
                let loc = self.locs[id.roster_index(&self.config)].clone();
                let t = Self::read_tensor(&mut self.file, &loc).map_err(|e| match e {
                    Error::Io(source) => Error::Stream { layer: l, source },
                    Error::Truncation(msg) => Error::Stream {
                        layer: l,
                        source: std::io::Error::new(std::io::ErrorKind::UnexpectedEof, msg),
                    },
                    other => other,
                })?;
                owned.push(t);
            }
            let arr: [OwnedTensor; 9] = owned
                .try_into()
                .unwrap_or_else(|_| unreachable!("exactly nine per-layer tensors"));
            layers.push(arr);
        }
        self.buf_layers = layers;
        self.buf_start = first;
        let loaded: u64 = self
            .buf_layers
            .iter()
            .flat_map(|l| l.iter())
            .map(|t| t.byte_size())
            .sum();
        self.peak_bytes = self.peak_bytes.max(self.resident_bytes + loaded);
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

impl WeightSource for StreamingWeights {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn embed(&mut self, token: usize, out: &mut [f32]) -> Result<()> {
        let dim = self.config.dim;
        if token >= self.config.vocab_size {
            return Err(Error::Index(format!(
                "token {token} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        match &self.embedding {
            OwnedTensor::F32(data) => out.copy_from_slice(&data[token * dim..(token + 1) * dim]),
            OwnedTensor::Q8 {
                values,
                scales,
                group,
            } => {
                let row = &values[token * dim..(token + 1) * dim];
                let row_scales = &scales[token * dim / group..(token + 1) * dim / group];
                super::math::dequant_row(row, row_scales, *group, out);
            }
        }
        Ok(())
    }

    fn layer(&mut self, layer: usize) -> Result<LayerView<'_>> {
        if layer >= self.config.n_layers {
            return Err(Error::Index(format!("layer {layer} out of range")));
        }
        let in_buffer =
            self.buf_start != usize::MAX && (self.buf_start..self.buf_start + self.buf_layers.len()).contains(&layer);
        if !in_buffer {
            // Chunks are aligned to multiples of the window so a sequential
            // pass loads each layer exactly once.
            let first = layer - layer % self.window;
            self.load_chunk(first)?;
        }
        let t = &self.buf_layers[layer - self.buf_start];
        Ok(LayerView {
            rms_att: t[0].as_ref(),
            wq: t[1].as_ref(),
            wk: t[2].as_ref(),
            wv: t[3].as_ref(),
            wo: t[4].as_ref(),
            rms_ffn: t[5].as_ref(),
            w_gate: t[6].as_ref(),
            w_down: t[7].as_ref(),
            w_up: t[8].as_ref(),
        })
    }

    fn final_rms(&mut self) -> Result<MatRef<'_>> {
        Ok(self.rms_final.as_ref())
    }

    fn output_proj(&mut self) -> Result<MatRef<'_>> {
        Ok(self.w_final.as_ref())
    }

    fn peak_weight_bytes(&self) -> u64 {
        self.peak_bytes
    }
}

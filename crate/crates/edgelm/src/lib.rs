//! Edge language model toolkit.
//!
//! Everything needed to take a Llama-2-style FP32 checkpoint and run it on
//! a small device, then measure what that does to its decisions:
//!
//! - [`model`] — configuration, tensor roster, FP32 checkpoints (ELMC) and
//!   the binary tokenizer format (ELMT)
//! - [`quant`] — absmax group-wise INT8 quantization, reconstruction
//!   error, byte-exact memory accounting, quantized checkpoints (ELMQ)
//! - [`sparse`] — bitvector sparse-matrix serialization (ELMS) and L1
//!   magnitude pruning
//! - [`infer`] — single-threaded forward pass over FP32 or INT8 weights,
//!   greedy/temperature sampling, and window-streamed segmented execution
//! - [`feedback`] — per-layer constraint weights (ELMF) applied at
//!   inference time and updated from observed decisions
//! - [`harness`] — the prompt battery, sequential querying with cooling,
//!   decision classification, JSONL logs, HTTP backends, and a scriptable
//!   mock server
//! - [`report`] — tables, CSV, and SVG charts over evaluation logs
//!
//! The `elm` binary wires these together; the `examples/` directory holds
//! one runnable example per capability.

pub mod error;
pub mod feedback;
pub mod fixture;
pub mod harness;
pub mod infer;
pub mod model;
pub mod quant;
pub mod report;
pub mod sparse;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use model::{Checkpoint, ModelConfig};
pub use tensor::TensorF32;

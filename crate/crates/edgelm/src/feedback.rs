//! Inference-time bias feedback loop: per-layer constraint weights applied
//! to residual contributions and updated from observed decisions.
//!
//! Pre-trained weights are never written. Each layer's attention and FFN
//! outputs are multiplied by that layer's constraint weight c[l] as they
//! enter the residual stream; observations move c within a sliding window
//! of layers using an EMA-driven proportional controller with clamping.
//!
//! ELMF layout: `"ELMF" | version u32 | n_layers u32 | window_size u32 |
//! c_min f32 | c_max f32 | ema_decay f32 | strength f32` then n_layers
//! records of `{n_base f32, c f32}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{expect_magic, read_f32, read_u32};

pub const ELMF_MAGIC: [u8; 4] = *b"ELMF";
pub const ELMF_VERSION: u32 = 1;
/// magic + version + n_layers + window + 4 f32 controller params.
pub const ELMF_HEADER_BYTES: u64 = 4 + 4 + 4 + 4 + 4 * 4;

pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_C_MIN: f32 = 0.5;
pub const DEFAULT_C_MAX: f32 = 1.5;
pub const DEFAULT_EMA_DECAY: f64 = 0.9;
pub const DEFAULT_STRENGTH: f64 = 0.1;

/// Per-layer multipliers on residual contributions, plus the controller
/// parameters that govern how they move.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintWeights {
    window_size: usize,
    c_min: f32,
    c_max: f32,
    /// EMA decay (the controller's beta). Held in f64 so long observation
    /// runs track the closed-form recurrence tightly.
    ema_decay: f64,
    /// Update strength (the controller's alpha).
    strength: f64,
    /// Baseline (prior) weight per layer.
    n_base: Vec<f32>,
    /// Current constraint multiplier per layer.
    c: Vec<f32>,
}

impl ConstraintWeights {
    /// Identity constraints: every layer at n_base = c = 1.0.
    pub fn identity(n_layers: usize) -> Self {
        Self {
            window_size: DEFAULT_WINDOW,
            c_min: DEFAULT_C_MIN,
            c_max: DEFAULT_C_MAX,
            ema_decay: DEFAULT_EMA_DECAY,
            strength: DEFAULT_STRENGTH,
            n_base: vec![1.0; n_layers],
            c: vec![1.0; n_layers],
        }
    }

    pub fn with_bounds(mut self, c_min: f32, c_max: f32) -> Result<Self> {
        if !(c_min.is_finite() && c_max.is_finite()) || c_min > c_max {
            return Err(Error::Range(format!(
                "invalid clamp bounds [{c_min}, {c_max}]"
            )));
        }
        self.c_min = c_min;
        self.c_max = c_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_window(mut self, window_size: usize) -> Result<Self> {
        if window_size == 0 {
            return Err(Error::Range("window size must be >= 1".into()));
        }
        self.window_size = window_size;
        Ok(self)
    }

    pub fn with_controller(mut self, ema_decay: f64, strength: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_decay) || !strength.is_finite() || strength < 0.0 {
            return Err(Error::Range(format!(
                "invalid controller parameters beta={ema_decay} alpha={strength}"
            )));
        }
        self.ema_decay = ema_decay;
        self.strength = strength;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Format("window size must be >= 1".into()));
        }
        if self.n_base.len() != self.c.len() || self.c.is_empty() {
            return Err(Error::Format("per-layer arrays are inconsistent".into()));
        }
        for (l, &v) in self.c.iter().enumerate() {
            if !v.is_finite() || v < self.c_min || v > self.c_max {
                return Err(Error::Format(format!(
                    "c[{l}] = {v} outside [{}, {}]",
                    self.c_min, self.c_max
                )));
            }
        }
        if self.n_base.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite n_base entry".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.c.len()
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Layers touched per observation.
    pub fn effective_window(&self) -> usize {
        self.window_size.min(self.n_layers())
    }

    pub fn bounds(&self) -> (f32, f32) {
        (self.c_min, self.c_max)
    }

    pub fn controller(&self) -> (f64, f64) {
        (self.ema_decay, self.strength)
    }

    pub fn c(&self) -> &[f32] {
        &self.c
    }

    pub fn n_base(&self) -> &[f32] {
        &self.n_base
    }

    /// Pin one layer's multiplier; used to build prompt-specific presets.
    pub fn set_c(&mut self, layer: usize, value: f32) -> Result<()> {
        if layer >= self.n_layers() {
            return Err(Error::Index(format!("layer {layer} out of range")));
        }
        if !value.is_finite() || value < self.c_min || value > self.c_max {
            return Err(Error::Range(format!(
                "c = {value} outside [{}, {}]",
                self.c_min, self.c_max
            )));
        }
        self.c[layer] = value;
        Ok(())
    }

    pub fn set_n_base(&mut self, layer: usize, value: f32) -> Result<()> {
        if layer >= self.n_layers() {
            return Err(Error::Index(format!("layer {layer} out of range")));
        }
        if !value.is_finite() {
            return Err(Error::Range("n_base must be finite".into()));
        }
        self.n_base[layer] = value;
        Ok(())
    }
}

/// Controller state carried across a closed generate-classify-observe loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackState {
    weights: ConstraintWeights,
    bias_ema: f64,
    window_start: usize,
    update_count: u64,
}

impl FeedbackState {
    pub fn new(weights: ConstraintWeights) -> Self {
        Self {
            weights,
            bias_ema: 0.0,
            window_start: 0,
            update_count: 0,
        }
    }

    pub fn weights(&self) -> &ConstraintWeights {
        &self.weights
    }

    pub fn bias_ema(&self) -> f64 {
        self.bias_ema
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn window_start(&self) -> usize {
        self.window_start
    }

    /// Fold one observed decision into the controller. Decision 0 is the
    /// biased outcome; the EMA tracks its rate and every layer in the
    /// current window moves toward the zero-bias target, clamped to
    /// [c_min, c_max]. The window then advances one layer, wrapping.
    pub fn observe(&mut self, decision: u8) -> Result<()> {
        if decision > 2 {
            return Err(Error::Domain(format!(
                "decision code {decision} outside {{0, 1, 2}}"
            )));
        }
        let b = if decision == 0 { 1.0 } else { 0.0 };
        let beta = self.weights.ema_decay;
        self.bias_ema = beta * self.bias_ema + (1.0 - beta) * b;
        let n_layers = self.weights.n_layers();
        let win = self.weights.effective_window();
        let delta = (self.weights.strength * self.bias_ema) as f32;
        for i in 0..win {
            let l = (self.window_start + i) % n_layers;
            let updated = (self.weights.c[l] - delta).clamp(self.weights.c_min, self.weights.c_max);
            self.weights.c[l] = updated;
        }
        self.window_start = (self.window_start + 1) % n_layers;
        self.update_count += 1;
        Ok(())
    }

    /// Back to the baseline: c = n_base, EMA and window cursor cleared.
    pub fn reset(&mut self) {
        let n_base = self.weights.n_base.clone();
        self.weights.c = n_base;
        self.bias_ema = 0.0;
        self.window_start = 0;
        self.update_count = 0;
    }
}

/// Persist constraint weights as an ELMF file.
pub fn save_weights(cw: &ConstraintWeights, path: &Path) -> Result<()> {
    cw.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ELMF_MAGIC)?;
    w.write_all(&ELMF_VERSION.to_le_bytes())?;
    w.write_all(&(cw.n_layers() as u32).to_le_bytes())?;
    w.write_all(&(cw.window_size as u32).to_le_bytes())?;
    w.write_all(&cw.c_min.to_le_bytes())?;
    w.write_all(&cw.c_max.to_le_bytes())?;
    w.write_all(&(cw.ema_decay as f32).to_le_bytes())?;
    w.write_all(&(cw.strength as f32).to_le_bytes())?;
    for l in 0..cw.n_layers() {
        w.write_all(&cw.n_base[l].to_le_bytes())?;
        w.write_all(&cw.c[l].to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load an ELMF file; invariants (clamp bounds, finiteness) are enforced.
pub fn load_weights(path: &Path) -> Result<ConstraintWeights> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, &ELMF_MAGIC, "ELMF")?;
    let version = read_u32(&mut r, "version")?;
    if version != ELMF_VERSION {
        return Err(Error::Format(format!(
            "unsupported ELMF version {version} (expected {ELMF_VERSION})"
        )));
    }
    let n_layers = read_u32(&mut r, "n_layers")? as usize;
    let window_size = read_u32(&mut r, "window_size")? as usize;
    let c_min = read_f32(&mut r, "c_min")?;
    let c_max = read_f32(&mut r, "c_max")?;
    let ema_decay = read_f32(&mut r, "ema_decay")? as f64;
    let strength = read_f32(&mut r, "strength")? as f64;
    let mut n_base = Vec::with_capacity(n_layers);
    let mut c = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        n_base.push(read_f32(&mut r, "n_base")?);
        c.push(read_f32(&mut r, "c")?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after layer records".into()));
    }
    let cw = ConstraintWeights {
        window_size,
        c_min,
        c_max,
        ema_decay,
        strength,
        n_base,
        c,
    };
    cw.validate()?;
    if !(0.0..1.0).contains(&cw.ema_decay) || cw.strength < 0.0 {
        return Err(Error::Format(format!(
            "controller parameters beta={} alpha={} out of range",
            cw.ema_decay, cw.strength
        )));
    }
    Ok(cw)
}

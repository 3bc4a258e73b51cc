//! Byte-level BPE tokenizer and the ELMT vocabulary format.
//!
//! ELMT layout: `"ELMT" | version u32 | vocab_size u32 | max_token_length u32`
//! followed by `vocab_size` records of `{score f32, len u32, bytes}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{expect_magic, read_bytes, read_f32, read_u32};

pub const ELMT_MAGIC: [u8; 4] = *b"ELMT";
pub const ELMT_VERSION: u32 = 1;

/// Scored byte-string vocabulary with greedy merge encoding.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vec<(Vec<u8>, f32)>,
    max_token_length: u32,
    lookup: HashMap<Vec<u8>, u32>,
}

impl Tokenizer {
    pub fn new(vocab: Vec<(Vec<u8>, f32)>) -> Result<Self> {
        if vocab.iter().any(|(_, s)| !s.is_finite()) {
            return Err(Error::Format("vocabulary score is not finite".into()));
        }
        let max_token_length = vocab.iter().map(|(b, _)| b.len()).max().unwrap_or(0) as u32;
        // First occurrence wins on duplicate byte strings.
        let mut lookup = HashMap::with_capacity(vocab.len());
        for (i, (bytes, _)) in vocab.iter().enumerate() {
            lookup.entry(bytes.clone()).or_insert(i as u32);
        }
        Ok(Self {
            vocab,
            max_token_length,
            lookup,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn max_token_length(&self) -> u32 {
        self.max_token_length
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(|(b, _)| b.as_slice())
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        self.lookup.get(bytes).copied()
    }

    /// Greedy BPE: seed with single-byte tokens, then repeatedly merge the
    /// adjacent pair whose concatenation has the highest vocabulary score.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids: Vec<u32> = Vec::with_capacity(text.len());
        for &b in text.as_bytes() {
            match self.lookup.get([b].as_slice()) {
                Some(&id) => ids.push(id),
                None => {
                    return Err(Error::Encoding(format!(
                        "byte 0x{b:02x} has no byte-fallback token"
                    )))
                }
            }
        }
        let mut merged = Vec::with_capacity(self.max_token_length as usize * 2);
        loop {
            let mut best: Option<(f32, u32, usize)> = None;
            for i in 0..ids.len().saturating_sub(1) {
                merged.clear();
                merged.extend_from_slice(&self.vocab[ids[i] as usize].0);
                merged.extend_from_slice(&self.vocab[ids[i + 1] as usize].0);
                if let Some(&id) = self.lookup.get(merged.as_slice()) {
                    let score = self.vocab[id as usize].1;
                    if best.is_none_or(|(s, _, _)| score > s) {
                        best = Some((score, id, i));
                    }
                }
            }
            match best {
                Some((_, id, i)) => {
                    ids[i] = id;
                    ids.remove(i + 1);
                }
                None => break,
            }
        }
        Ok(ids)
    }

    /// Concatenate token bytes; invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.token_bytes(id) {
                Some(b) => bytes.extend_from_slice(b),
                None => {
                    return Err(Error::Index(format!(
                        "token id {id} outside vocabulary of {}",
                        self.vocab.len()
                    )))
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

pub fn write_tokenizer(tok: &Tokenizer, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ELMT_MAGIC)?;
    w.write_all(&ELMT_VERSION.to_le_bytes())?;
    w.write_all(&(tok.vocab.len() as u32).to_le_bytes())?;
    w.write_all(&tok.max_token_length.to_le_bytes())?;
    for (bytes, score) in &tok.vocab {
        w.write_all(&score.to_le_bytes())?;
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, &ELMT_MAGIC, "ELMT")?;
    let version = read_u32(&mut r, "version")?;
    if version != ELMT_VERSION {
        return Err(Error::Format(format!(
            "unsupported ELMT version {version} (expected {ELMT_VERSION})"
        )));
    }
    let vocab_size = read_u32(&mut r, "vocab_size")? as usize;
    let declared_max = read_u32(&mut r, "max_token_length")?;
    let mut vocab = Vec::with_capacity(vocab_size);
    for i in 0..vocab_size {
        let score = read_f32(&mut r, "score")?;
        if !score.is_finite() {
            return Err(Error::Format(format!("token {i} has non-finite score")));
        }
        let len = read_u32(&mut r, "token length")? as usize;
        if len as u32 > declared_max {
            return Err(Error::Format(format!(
                "token {i} length {len} exceeds declared max {declared_max}"
            )));
        }
        let bytes = read_bytes(&mut r, len, "token bytes")?;
        vocab.push((bytes, score));
    }
    let tok = Tokenizer::new(vocab)?;
    Ok(tok)
}

/// Vocabulary containing all 256 single-byte tokens (score 0) followed by
/// `extra` multi-byte tokens. The workhorse for toy models and tests.
pub fn byte_fallback_vocab(extra: &[(&str, f32)]) -> Vec<(Vec<u8>, f32)> {
    let mut vocab: Vec<(Vec<u8>, f32)> = (0u16..256).map(|b| (vec![b as u8], 0.0)).collect();
    for (s, score) in extra {
        vocab.push((s.as_bytes().to_vec(), *score));
    }
    vocab
}

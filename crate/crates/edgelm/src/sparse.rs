//! Bitvector sparse-matrix serialization and L1 magnitude pruning.
//!
//! ELMS layout: `"ELMS" | version u32 | n_rows u32 | n_cols u32 |
//! n_entries u64 | bitvector (ceil(n_entries/8) bytes, row-major, MSB
//! first within a byte) | nnz x FP32 values`.
//!
//! One bit per entry marks presence; the dense array holds the non-zero
//! values in row-major order, so file size tracks the non-zero count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{expect_magic, read_u32, read_u64};
use crate::tensor::TensorF32;

pub const ELMS_MAGIC: [u8; 4] = *b"ELMS";
pub const ELMS_VERSION: u32 = 1;
/// magic + version + n_rows + n_cols + n_entries.
pub const ELMS_HEADER_BYTES: u64 = 4 + 4 + 4 + 4 + 8;

/// Presence bitvector plus dense non-zero values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    bitvector: Vec<u8>,
    nz_values: Vec<f32>,
}

impl SparseMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Total entry count, zero and non-zero alike.
    pub fn n_entries(&self) -> u64 {
        self.n_rows as u64 * self.n_cols as u64
    }

    pub fn nnz(&self) -> usize {
        self.nz_values.len()
    }

    pub fn bitvector(&self) -> &[u8] {
        &self.bitvector
    }

    pub fn nz_values(&self) -> &[f32] {
        &self.nz_values
    }

    fn bit(&self, pos: usize) -> bool {
        self.bitvector[pos / 8] & (0x80 >> (pos % 8)) != 0
    }

    /// Number of set bits strictly before `pos`.
    fn rank(&self, pos: usize) -> usize {
        let full_bytes = pos / 8;
        let mut rank: usize = self.bitvector[..full_bytes]
            .iter()
            .map(|b| b.count_ones() as usize)
            .sum();
        let rem = pos % 8;
        if rem > 0 {
            let mask = !((1u16 << (8 - rem)) - 1) as u8;
            rank += (self.bitvector[full_bytes] & mask).count_ones() as usize;
        }
        rank
    }
}

/// Convert a 2-D dense tensor to the sparse form. An entry is "non-zero"
/// when its bit pattern is non-zero, so -0.0 and NaN payloads survive the
/// round trip bit-exactly.
pub fn to_sparse(dense: &TensorF32) -> Result<SparseMatrix> {
    let (n_rows, n_cols) = dense.dims2()?;
    let n = n_rows * n_cols;
    let mut bitvector = vec![0u8; n.div_ceil(8)];
    let mut nz_values = Vec::new();
    for (pos, &v) in dense.data().iter().enumerate() {
        if v.to_bits() != 0 {
            bitvector[pos / 8] |= 0x80 >> (pos % 8);
            nz_values.push(v);
        }
    }
    Ok(SparseMatrix {
        n_rows,
        n_cols,
        bitvector,
        nz_values,
    })
}

/// Reconstruct the dense tensor; inverse of [`to_sparse`].
pub fn to_dense(m: &SparseMatrix) -> TensorF32 {
    let n = m.n_rows * m.n_cols;
    let mut data = vec![0.0f32; n];
    let mut next = 0;
    for (pos, slot) in data.iter_mut().enumerate() {
        if m.bit(pos) {
            *slot = m.nz_values[next];
            next += 1;
        }
    }
    TensorF32::new(vec![m.n_rows, m.n_cols], data).expect("length matches by construction")
}

/// Value at (row, col): zero when the bit is clear, otherwise the rank-th
/// non-zero value. Rank is popcounted over whole bytes, so lookup is
/// O(position / 8) rather than bit-by-bit.
pub fn lookup(m: &SparseMatrix, row: usize, col: usize) -> Result<f32> {
    if row >= m.n_rows || col >= m.n_cols {
        return Err(Error::Index(format!(
            "({row}, {col}) outside {}x{} matrix",
            m.n_rows, m.n_cols
        )));
    }
    let pos = row * m.n_cols + col;
    if !m.bit(pos) {
        return Ok(0.0);
    }
    Ok(m.nz_values[m.rank(pos)])
}

/// Outcome of one pruning pass.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PruneReport {
    pub fraction_requested: f64,
    pub entries_zeroed: usize,
    /// Bytes the pruned tensor would occupy in the ELMS format.
    pub serialized_bytes: u64,
}

/// Zero the `floor(fraction * n)` entries of smallest absolute value.
/// Ties break toward the lower row-major index.
pub fn l1_prune(dense: &TensorF32, fraction: f64) -> Result<(TensorF32, PruneReport)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Range(format!(
            "prune fraction {fraction} outside [0, 1]"
        )));
    }
    let n = dense.len();
    let k = ((fraction * n as f64).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dense.data()[a]
            .abs()
            .total_cmp(&dense.data()[b].abs())
            .then(a.cmp(&b))
    });
    let mut pruned = dense.clone();
    for &idx in &order[..k] {
        pruned.data_mut()[idx] = 0.0;
    }
    let nnz = pruned.data().iter().filter(|v| v.to_bits() != 0).count() as u64;
    let report = PruneReport {
        fraction_requested: fraction,
        entries_zeroed: k,
        serialized_bytes: ELMS_HEADER_BYTES + (n as u64).div_ceil(8) + 4 * nnz,
    };
    Ok((pruned, report))
}

/// Exact ELMS byte size: header + bitvector + dense non-zero array.
pub fn serialized_size(m: &SparseMatrix) -> u64 {
    ELMS_HEADER_BYTES + m.n_entries().div_ceil(8) + 4 * m.nnz() as u64
}

pub fn write_sparse(m: &SparseMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&ELMS_MAGIC)?;
    w.write_all(&ELMS_VERSION.to_le_bytes())?;
    w.write_all(&(m.n_rows as u32).to_le_bytes())?;
    w.write_all(&(m.n_cols as u32).to_le_bytes())?;
    w.write_all(&m.n_entries().to_le_bytes())?;
    w.write_all(&m.bitvector)?;
    crate::model::write_f32_slice(&mut w, &m.nz_values)?;
    w.flush()?;
    Ok(())
}

pub fn load_sparse(path: &Path) -> Result<SparseMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, &ELMS_MAGIC, "ELMS")?;
    let version = read_u32(&mut r, "version")?;
    if version != ELMS_VERSION {
        return Err(Error::Format(format!(
            "unsupported ELMS version {version} (expected {ELMS_VERSION})"
        )));
    }
    let n_rows = read_u32(&mut r, "n_rows")? as usize;
    let n_cols = read_u32(&mut r, "n_cols")? as usize;
    let n_entries = read_u64(&mut r, "n_entries")?;
    if n_entries != n_rows as u64 * n_cols as u64 {
        return Err(Error::Format(format!(
            "n_entries {n_entries} != n_rows * n_cols = {}",
            n_rows as u64 * n_cols as u64
        )));
    }
    let bitvector = crate::model::read_bytes(&mut r, n_entries.div_ceil(8) as usize, "bitvector")?;
    // Padding bits past n_entries must be zero.
    let rem = (n_entries % 8) as u8;
    if rem != 0 {
        let last = *bitvector.last().expect("non-empty when rem > 0");
        if last & ((1u16 << (8 - rem)) - 1) as u8 != 0 {
            return Err(Error::Format(
                "non-zero padding bits in final bitvector byte".into(),
            ));
        }
    }
    let nnz: usize = bitvector.iter().map(|b| b.count_ones() as usize).sum();
    let nz_values = crate::model::read_f32_vec(&mut r, nnz, "non-zero values")?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after value array".into()));
    }
    Ok(SparseMatrix {
        n_rows,
        n_cols,
        bitvector,
        nz_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize, vals: &[f32]) -> TensorF32 {
        TensorF32::new(vec![rows, cols], vals.to_vec()).unwrap()
    }

    #[test]
    fn all_zero_matrix() {
        let m = to_sparse(&TensorF32::zeros(vec![4, 4])).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.bitvector(), &[0, 0]);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(lookup(&m, r, c).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn hand_built_two_by_two() {
        let m = to_sparse(&dense(2, 2, &[0.0, 3.0, 5.0, 0.0])).unwrap();
        // bits 0110, MSB-first in the byte.
        assert_eq!(m.bitvector(), &[0b0110_0000]);
        assert_eq!(m.nz_values(), &[3.0, 5.0]);
        assert_eq!(lookup(&m, 1, 0).unwrap(), 5.0);
        assert_eq!(lookup(&m, 0, 1).unwrap(), 3.0);
        assert_eq!(to_dense(&m), dense(2, 2, &[0.0, 3.0, 5.0, 0.0]));
    }

    #[test]
    fn identity_three_by_three() {
        let m = to_sparse(&dense(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.])).unwrap();
        // bits 100 010 001 packed MSB-first: 1000 1000 | 1 0000000.
        assert_eq!(m.bitvector(), &[0b1000_1000, 0b1000_0000]);
        assert_eq!(m.nz_values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn to_sparse_requires_two_dims() {
        let t = TensorF32::zeros(vec![8]);
        assert!(matches!(to_sparse(&t), Err(Error::Shape(_))));
    }

    #[test]
    fn lookup_rejects_out_of_range() {
        let m = to_sparse(&TensorF32::zeros(vec![2, 2])).unwrap();
        assert!(matches!(lookup(&m, 2, 0), Err(Error::Index(_))));
        assert!(matches!(lookup(&m, 0, 2), Err(Error::Index(_))));
    }

    #[test]
    fn negative_zero_survives_roundtrip() {
        let t = dense(1, 3, &[-0.0, 0.0, 2.0]);
        let m = to_sparse(&t).unwrap();
        assert_eq!(m.nnz(), 2); // -0.0 has a non-zero bit pattern
        let back = to_dense(&m);
        assert_eq!(back.data()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn prune_zero_and_one_fractions() {
        let t = dense(2, 2, &[1.0, -4.0, 2.0, -3.0]);
        let (unchanged, rep) = l1_prune(&t, 0.0).unwrap();
        assert_eq!(unchanged, t);
        assert_eq!(rep.entries_zeroed, 0);
        let (all_zero, rep) = l1_prune(&t, 1.0).unwrap();
        assert!(all_zero.data().iter().all(|&v| v == 0.0));
        assert_eq!(rep.entries_zeroed, 4);
    }

    #[test]
    fn prune_half_keeps_largest_magnitudes() {
        let t = dense(1, 4, &[1.0, -4.0, 2.0, -3.0]);
        let (pruned, rep) = l1_prune(&t, 0.5).unwrap();
        assert_eq!(pruned.data(), &[0.0, -4.0, 0.0, -3.0]);
        assert_eq!(rep.entries_zeroed, 2);
    }

    #[test]
    fn prune_breaks_ties_toward_lower_index() {
        let t = dense(1, 4, &[2.0, 2.0, 2.0, 2.0]);
        let (pruned, _) = l1_prune(&t, 0.5).unwrap();
        assert_eq!(pruned.data(), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn prune_rejects_out_of_range_fraction() {
        let t = dense(1, 4, &[1.0; 4]);
        assert!(matches!(l1_prune(&t, -0.1), Err(Error::Range(_))));
        assert!(matches!(l1_prune(&t, 1.1), Err(Error::Range(_))));
    }

    #[test]
    fn serialized_size_arithmetic() {
        let empty = to_sparse(&TensorF32::zeros(vec![0, 0])).unwrap();
        assert_eq!(serialized_size(&empty), ELMS_HEADER_BYTES);
        let m = to_sparse(&dense(4, 4, &{
            let mut v = [0.0f32; 16];
            v[1] = 1.0;
            v[7] = 2.0;
            v[12] = 3.0;
            v
        }))
        .unwrap();
        assert_eq!(serialized_size(&m), ELMS_HEADER_BYTES + 2 + 12);
    }

    #[test]
    fn file_roundtrip_and_padding_enforcement() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.elms");
        let t = dense(3, 3, &[0., 7., 0., 0., 0., -2., 1., 0., 0.]);
        let m = to_sparse(&t).unwrap();
        write_sparse(&m, &path).unwrap();
        let loaded = load_sparse(&path).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), serialized_size(&m));

        // Corrupt a padding bit: 9 entries leave 7 padding bits in byte 1.
        let mut bytes = std::fs::read(&path).unwrap();
        let bv_start = ELMS_HEADER_BYTES as usize;
        bytes[bv_start + 1] |= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_sparse(&path), Err(Error::Format(_))));
    }
}

//! Slab-wise sparse storage for third-order block tensors.
//!
//! Each frontal slab is kept twice: compressed rows for the mode-1 product
//! (transposed slabs) and compressed columns for the mode-2 product.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unordered pair of entity-type indices, canonicalized so that `m <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockKey {
    pub m: usize,
    pub n: usize,
}

impl BlockKey {
    /// Canonical key for a pair of types, plus whether the pair was swapped.
    pub fn canonical(a: usize, b: usize) -> (BlockKey, bool) {
        if a <= b {
            (BlockKey { m: a, n: b }, false)
        } else {
            (BlockKey { m: b, n: a }, true)
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.m == self.n
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

/// One frontal slab `X^k` of shape `rows x cols`.
///
/// `row_vals`/`col_vals` are `None` for binary slabs, where every stored entry is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Slab {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    row_vals: Option<Vec<f64>>,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    col_vals: Option<Vec<f64>>,
    /// CSR-aligned: entry was seen in this orientation in the input.
    /// Only kept for symmetrized slabs.
    observed: Option<Vec<bool>>,
}

impl Slab {
    /// Binary slab from coordinates; duplicates collapse to a single 1.
    pub fn binary(rows: usize, cols: usize, mut coords: Vec<(u32, u32)>) -> Result<Slab> {
        check_coords(rows, cols, coords.iter().copied())?;
        coords.sort_unstable();
        coords.dedup();
        Ok(Self::assemble(rows, cols, &coords, None, None))
    }

    /// Symmetric binary slab from directed edges: each `(i, j)` also inserts
    /// `(j, i)`, and the observed orientations are remembered.
    pub fn symmetrized(n: usize, directed: &[(u32, u32)]) -> Result<Slab> {
        check_coords(n, n, directed.iter().copied())?;
        let mut tagged: Vec<(u32, u32, bool)> = Vec::with_capacity(directed.len() * 2);
        for &(i, j) in directed {
            tagged.push((i, j, true));
            if i != j {
                tagged.push((j, i, false));
            }
        }
        // observed entries sort after unobserved duplicates; keep the last
        tagged.sort_unstable();
        let mut coords = Vec::with_capacity(tagged.len());
        let mut observed = Vec::with_capacity(tagged.len());
        for (idx, &(i, j, obs)) in tagged.iter().enumerate() {
            if let Some(&(ni, nj, _)) = tagged.get(idx + 1) {
                if (ni, nj) == (i, j) {
                    continue;
                }
            }
            coords.push((i, j));
            observed.push(obs);
        }
        Ok(Self::assemble(n, n, &coords, None, Some(observed)))
    }

    /// Real-valued slab. Duplicate coordinates are rejected.
    pub fn weighted(rows: usize, cols: usize, mut entries: Vec<(u32, u32, f64)>) -> Result<Slab> {
        check_coords(rows, cols, entries.iter().map(|e| (e.0, e.1)))?;
        if entries.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::Invalid("non-finite slab value".into()));
        }
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        if entries.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::Invalid("duplicate coordinate in weighted slab".into()));
        }
        let coords: Vec<(u32, u32)> = entries.iter().map(|e| (e.0, e.1)).collect();
        let vals: Vec<f64> = entries.iter().map(|e| e.2).collect();
        Ok(Self::assemble(rows, cols, &coords, Some(vals), None))
    }

    /// Dense row-major values, zeros dropped.
    pub fn from_dense(rows: usize, cols: usize, values: &[f64]) -> Result<Slab> {
        if values.len() != rows * cols {
            return Err(Error::dim("Slab::from_dense", "value count"));
        }
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(p, &v)| ((p / cols) as u32, (p % cols) as u32, v))
            .collect();
        Slab::weighted(rows, cols, entries)
    }

    pub fn empty(rows: usize, cols: usize) -> Slab {
        Self::assemble(rows, cols, &[], None, None)
    }

    fn assemble(
        rows: usize,
        cols: usize,
        coords: &[(u32, u32)],
        vals: Option<Vec<f64>>,
        observed: Option<Vec<bool>>,
    ) -> Slab {
        // coords are sorted by (row, col) and unique
        let mut row_ptr = vec![0usize; rows + 1];
        for &(i, _) in coords {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx: Vec<u32> = coords.iter().map(|c| c.1).collect();

        let mut col_ptr = vec![0usize; cols + 1];
        for &(_, j) in coords {
            col_ptr[j as usize + 1] += 1;
        }
        for j in 0..cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0u32; coords.len()];
        let mut col_vals = vals.as_ref().map(|_| vec![0.0; coords.len()]);
        // walking in row order keeps row indices sorted within each column
        for (p, &(i, j)) in coords.iter().enumerate() {
            let slot = next[j as usize];
            next[j as usize] += 1;
            row_idx[slot] = i;
            if let (Some(cv), Some(v)) = (col_vals.as_mut(), vals.as_ref()) {
                cv[slot] = v[p];
            }
        }
        Slab {
            rows,
            cols,
            row_ptr,
            col_idx,
            row_vals: vals,
            col_ptr,
            row_idx,
            col_vals,
            observed,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_binary(&self) -> bool {
        self.row_vals.is_none()
    }

    /// Column indices and values (None = all ones) of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], Option<&[f64]>) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], self.row_vals.as_ref().map(|v| &v[s..e]))
    }

    /// Row indices and values (None = all ones) of column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> (&[u32], Option<&[f64]>) {
        let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[s..e], self.col_vals.as_ref().map(|v| &v[s..e]))
    }

    /// All stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .enumerate()
                .map(move |(p, &j)| (i, j as usize, vals.map_or(1.0, |v| v[p])))
        })
    }

    /// Entries seen in the input orientation. For slabs that were not
    /// symmetrized this is every entry.
    pub fn observed_entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries()
            .enumerate()
            .filter(|(p, _)| self.observed.as_ref().is_none_or(|o| o[*p]))
            .map(|(_, (i, j, _))| (i, j))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals.map_or(1.0, |v| v[p]),
            Err(_) => 0.0,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.entries().all(|(i, j, v)| self.get(j, i) == v)
    }

    pub fn frobenius_sq(&self) -> f64 {
        match &self.row_vals {
            None => self.nnz() as f64,
            Some(v) => v.iter().map(|x| x * x).sum(),
        }
    }

    /// `y = X x` (or `Xᵀ x` when `transpose`), computed row by row.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64], transpose: bool) {
        let n_out = if transpose { self.cols } else { self.rows };
        debug_assert_eq!(y.len(), n_out);
        for (o, yo) in y.iter_mut().enumerate() {
            let (idx, vals) = if transpose { self.col(o) } else { self.row(o) };
            let s: f64 = match vals {
                None => idx.iter().map(|&p| x[p as usize]).sum(),
                Some(v) => idx.iter().zip(v).map(|(&p, w)| w * x[p as usize]).sum(),
            };
            *yo += s;
        }
    }
}

fn check_coords(rows: usize, cols: usize, mut it: impl Iterator<Item = (u32, u32)>) -> Result<()> {
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(Error::Invalid("slab dimension exceeds u32 index range".into()));
    }
    match it.find(|&(i, j)| i as usize >= rows || j as usize >= cols) {
        Some((i, j)) => Err(Error::dim(
            "slab",
            format!("coordinate ({i},{j}) outside {rows}x{cols}"),
        )),
        None => Ok(()),
    }
}

/// Third-order tensor for one entity-type pair, stored as frontal slabs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBlockTensor {
    key: BlockKey,
    rows: usize,
    cols: usize,
    slabs: Vec<Slab>,
    symmetric: bool,
}

impl SparseBlockTensor {
    pub fn new(key: BlockKey, rows: usize, cols: usize, slabs: Vec<Slab>) -> Result<Self> {
        if slabs.is_empty() {
            return Err(Error::Invalid(format!("block {key} has no slabs")));
        }
        if let Some(s) = slabs.iter().find(|s| s.rows != rows || s.cols != cols) {
            return Err(Error::dim(
                "SparseBlockTensor::new",
                format!("slab {}x{} in block {rows}x{cols}", s.rows, s.cols),
            ));
        }
        if key.is_diagonal() && rows != cols {
            return Err(Error::dim("SparseBlockTensor::new", "diagonal block must be square"));
        }
        let symmetric = key.is_diagonal() && slabs.iter().all(Slab::is_symmetric);
        Ok(SparseBlockTensor {
            key,
            rows,
            cols,
            slabs,
            symmetric,
        })
    }

    /// Dense `rows x cols x slabs` values indexed `[k][i * cols + j]`.
    pub fn from_dense(key: BlockKey, rows: usize, cols: usize, slabs: &[Vec<f64>]) -> Result<Self> {
        let slabs = slabs
            .iter()
            .map(|s| Slab::from_dense(rows, cols, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(key, rows, cols, slabs)
    }

    #[inline]
    pub fn key(&self) -> BlockKey {
        self.key
    }

    /// `(L_m, L_n, K)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.slabs.len())
    }

    #[inline]
    pub fn slabs(&self) -> &[Slab] {
        &self.slabs
    }

    #[inline]
    pub fn slab(&self, k: usize) -> &Slab {
        &self.slabs[k]
    }

    pub fn nnz(&self) -> usize {
        self.slabs.iter().map(Slab::nnz).sum()
    }

    pub fn sparsity(&self) -> f64 {
        let cells = self.rows as f64 * self.cols as f64 * self.slabs.len() as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.nnz() as f64 / cells
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.slabs.iter().map(Slab::frobenius_sq).sum()
    }

    pub fn is_binary(&self) -> bool {
        self.slabs.iter().all(Slab::is_binary)
    }

    /// Diagonal block whose every slab is symmetric.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slabs[k].get(i, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_key_swaps() {
        assert_eq!(BlockKey::canonical(3, 1), (BlockKey { m: 1, n: 3 }, true));
        assert_eq!(BlockKey::canonical(1, 1), (BlockKey { m: 1, n: 1 }, false));
    }

    #[test]
    fn binary_slab_dedups_and_indexes_both_ways() {
        let s = Slab::binary(3, 4, vec![(2, 1), (0, 3), (2, 1), (0, 0)]).unwrap();
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.row(0).0, &[0, 3]);
        assert_eq!(s.col(1).0, &[2]);
        assert_eq!(s.get(2, 1), 1.0);
        assert_eq!(s.get(1, 2), 0.0);
    }

    #[test]
    fn symmetrized_slab_keeps_orientation() {
        let s = Slab::symmetrized(3, &[(0, 1), (2, 2), (1, 0), (0, 2)]).unwrap();
        assert!(s.is_symmetric());
        // (0,1),(1,0),(0,2),(2,0),(2,2)
        assert_eq!(s.nnz(), 5);
        let obs: Vec<_> = s.observed_entries().collect();
        assert_eq!(obs, vec![(0, 1), (0, 2), (1, 0), (2, 2)]);
    }

    #[test]
    fn self_loop_inserted_once() {
        let s = Slab::symmetrized(2, &[(1, 1), (1, 1)]).unwrap();
        assert_eq!(s.nnz(), 1);
    }

    #[test]
    fn out_of_range_coordinate_rejected() {
        assert!(Slab::binary(2, 2, vec![(2, 0)]).is_err());
    }

    #[test]
    fn weighted_rejects_duplicates() {
        assert!(Slab::weighted(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
    }

    #[test]
    fn csc_values_follow_entries() {
        let s = Slab::weighted(2, 2, vec![(1, 0, 3.0), (0, 0, 2.0), (0, 1, 5.0)]).unwrap();
        let (rows, vals) = s.col(0);
        assert_eq!(rows, &[0, 1]);
        assert_eq!(vals.unwrap(), &[2.0, 3.0]);
        assert_eq!(s.frobenius_sq(), 4.0 + 9.0 + 25.0);
    }

    #[test]
    fn block_rejects_mismatched_slabs() {
        let k = BlockKey { m: 0, n: 1 };
        assert!(SparseBlockTensor::new(k, 2, 3, vec![Slab::empty(2, 2)]).is_err());
        assert!(SparseBlockTensor::new(k, 2, 3, vec![]).is_err());
    }
}

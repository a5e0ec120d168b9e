//! Row-major dense matrices of `f64`.
//!
//! Factor matrices are tall (entities x rank) and the per-update systems are
//! rank x rank, so only a handful of operations are needed here. Anything that
//! needs a factorization goes through `nalgebra` via [`DenseMatrix::to_na`].

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per chunk for the deterministic parallel Gram reduction.
const GRAM_CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::dim(
                "DenseMatrix::from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, values.len()),
            ));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("DenseMatrix::from_rows", "ragged rows"));
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            values: rows.concat(),
        })
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
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Plain triple-loop product; meant for rank-sized operands.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (p, &aip) in a.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                for (oj, &b) in o.iter_mut().zip(other.row(p)) {
                    *oj += aip * b;
                }
            }
        }
        Ok(out)
    }

    /// `AᵀA`. Rows are reduced in fixed-size chunks whose partial sums are
    /// added in chunk order, so the result does not depend on the thread count.
    pub fn gram(&self) -> DenseMatrix {
        let f = self.cols;
        let partial = |chunk: &[f64]| {
            let mut g = vec![0.0; f * f];
            for row in chunk.chunks_exact(f) {
                for (a, &ra) in row.iter().enumerate() {
                    if ra == 0.0 {
                        continue;
                    }
                    let ga = &mut g[a * f..(a + 1) * f];
                    for (b, &rb) in row.iter().enumerate().skip(a) {
                        ga[b] += ra * rb;
                    }
                }
            }
            g
        };
        let mut g = vec![0.0; f * f];
        if f > 0 {
            let partials: Vec<Vec<f64>> = self.values.par_chunks(GRAM_CHUNK * f).map(partial).collect();
            for p in partials {
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi += pi;
                }
            }
        }
        for a in 0..f {
            for b in 0..a {
                g[a * f + b] = g[b * f + a];
            }
        }
        DenseMatrix {
            rows: f,
            cols: f,
            values: g,
        }
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(
                "hadamard",
                format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values,
        })
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim(
                "add_assign",
                format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols.max(1)) {
            for (nj, v) in n.iter_mut().zip(row) {
                *nj += v * v;
            }
        }
        n.iter().map(|v| v.sqrt()).collect()
    }

    pub fn scale_columns(&mut self, factors: &[f64]) {
        debug_assert_eq!(factors.len(), self.cols);
        for row in self.values.chunks_exact_mut(self.cols.max(1)) {
            for (v, s) in row.iter_mut().zip(factors) {
                *v *= s;
            }
        }
    }

    /// Stack row blocks vertically.
    pub fn vstack(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::dim("vstack", "column counts differ"));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for p in parts {
            values.extend_from_slice(&p.values);
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn row_range(&self, start: usize, end: usize) -> DenseMatrix {
        DenseMatrix {
            rows: end - start,
            cols: self.cols,
            values: self.values[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
        DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.cols + j]
    }
}

/// `1ᵀ (A ∗ B ∗ C) 1` for three square matrices of equal size.
pub fn hadamard3_sum(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .zip(&c.values)
        .map(|((x, y), z)| x * y * z)
        .sum()
}

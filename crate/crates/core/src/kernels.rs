//! Sparse MTTKRP kernels that never form a Khatri-Rao product.
//!
//! All three modes return the MTTKRP *transposed*: one row per index of the
//! target mode, `rank` columns. That is the layout the normal equations
//! consume, one right-hand side per row.
//!
//! Mode 1 and mode 2 parallelize over output rows, each of which is a
//! sequential sum over slabs in slab order. Mode 3 reduces each slab in
//! fixed-size row chunks added in chunk order. Results are therefore
//! bit-identical for any thread count.

use rayon::prelude::*;

use crate::dense::{hadamard3_sum, DenseMatrix};
use crate::error::{Error, Result};
use crate::tensor::{Slab, SparseBlockTensor};

const MODE3_CHUNK_ROWS: usize = 4096;

/// Indices and optional values of one row or column of a slab.
type Fiber<'a> = (&'a [u32], Option<&'a [f64]>);

/// `((C ⊙ B)ᵀ X⁽¹⁾)ᵀ`: row `i` is `Σ_k C(k,:) ∗ Σ_j X^k(i,j) B(j,:)`.
///
/// `other` is the factor of mode 2 (`L_n x F`), `relation` is `K x F`.
/// Returns `L_m x F`.
pub fn mttkrp_mode1(x: &SparseBlockTensor, other: &DenseMatrix, relation: &DenseMatrix) -> Result<DenseMatrix> {
    let (rows, cols, k) = x.dims();
    check_rank("mttkrp_mode1", other, relation)?;
    check_rows("mttkrp_mode1", "mode-2 factor", other, cols)?;
    check_rows("mttkrp_mode1", "relation factor", relation, k)?;
    Ok(row_mttkrp(x.slabs(), rows, other, relation, Slab::row))
}

/// `((C ⊙ A)ᵀ X⁽²⁾)ᵀ`: row `j` is `Σ_k C(k,:) ∗ Σ_i X^k(i,j) A(i,:)`.
///
/// `other` is the factor of mode 1 (`L_m x F`). Returns `L_n x F`.
pub fn mttkrp_mode2(x: &SparseBlockTensor, other: &DenseMatrix, relation: &DenseMatrix) -> Result<DenseMatrix> {
    let (rows, cols, k) = x.dims();
    check_rank("mttkrp_mode2", other, relation)?;
    check_rows("mttkrp_mode2", "mode-1 factor", other, rows)?;
    check_rows("mttkrp_mode2", "relation factor", relation, k)?;
    Ok(row_mttkrp(x.slabs(), cols, other, relation, Slab::col))
}

fn row_mttkrp<'a>(
    slabs: &'a [Slab],
    n_out: usize,
    other: &DenseMatrix,
    relation: &DenseMatrix,
    fiber: fn(&'a Slab, usize) -> Fiber<'a>,
) -> DenseMatrix {
    let f = relation.cols();
    let mut out = DenseMatrix::zeros(n_out, f);
    if f == 0 {
        return out;
    }
    out.as_mut_slice().par_chunks_mut(f).enumerate().for_each(|(i, acc)| {
        for (k, slab) in slabs.iter().enumerate() {
            let (idx, vals) = fiber(slab, i);
            if idx.is_empty() {
                continue;
            }
            let c = relation.row(k);
            for (p, &j) in idx.iter().enumerate() {
                let w = vals.map_or(1.0, |v| v[p]);
                let b = other.row(j as usize);
                for ((a, &cf), &bf) in acc.iter_mut().zip(c).zip(b) {
                    *a += w * cf * bf;
                }
            }
        }
    });
    out
}

/// `((B ⊙ A)ᵀ X⁽³⁾)ᵀ`: row `k` is `Σ_{(i,j)} X^k(i,j) A(i,:) ∗ B(j,:)`.
///
/// Returns `K x F`.
pub fn mttkrp_mode3(x: &SparseBlockTensor, first: &DenseMatrix, second: &DenseMatrix) -> Result<DenseMatrix> {
    let (rows, cols, k) = x.dims();
    check_rank("mttkrp_mode3", first, second)?;
    check_rows("mttkrp_mode3", "mode-1 factor", first, rows)?;
    check_rows("mttkrp_mode3", "mode-2 factor", second, cols)?;
    let f = first.cols();
    let mut out = DenseMatrix::zeros(k, f);
    for (kk, slab) in x.slabs().iter().enumerate() {
        let acc = slab_mode3(slab, first, second);
        out.row_mut(kk).copy_from_slice(&acc);
    }
    Ok(out)
}

fn slab_mode3(slab: &Slab, first: &DenseMatrix, second: &DenseMatrix) -> Vec<f64> {
    let f = first.cols();
    let chunk = |start: usize| {
        let end = (start + MODE3_CHUNK_ROWS).min(slab.rows());
        let mut acc = vec![0.0; f];
        for i in start..end {
            let (idx, vals) = slab.row(i);
            if idx.is_empty() {
                continue;
            }
            let a = first.row(i);
            for (p, &j) in idx.iter().enumerate() {
                let w = vals.map_or(1.0, |v| v[p]);
                let b = second.row(j as usize);
                for ((s, &af), &bf) in acc.iter_mut().zip(a).zip(b) {
                    *s += w * af * bf;
                }
            }
        }
        acc
    };
    let starts: Vec<usize> = (0..slab.rows()).step_by(MODE3_CHUNK_ROWS).collect();
    let partials: Vec<Vec<f64>> = if slab.nnz() > MODE3_CHUNK_ROWS {
        starts.par_iter().map(|&s| chunk(s)).collect()
    } else {
        starts.iter().map(|&s| chunk(s)).collect()
    };
    let mut acc = vec![0.0; f];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// `AᵀA`.
pub fn gram(a: &DenseMatrix) -> DenseMatrix {
    a.gram()
}

/// `⟨X, ⟦A, B, C⟧⟩` summed over stored entries only.
pub fn sparse_inner(
    x: &SparseBlockTensor,
    first: &DenseMatrix,
    second: &DenseMatrix,
    relation: &DenseMatrix,
) -> Result<f64> {
    let m3 = mttkrp_mode3(x, first, second)?;
    check_rows("sparse_inner", "relation factor", relation, x.dims().2)?;
    check_rank("sparse_inner", first, relation)?;
    Ok(m3.as_slice().iter().zip(relation.as_slice()).map(|(a, b)| a * b).sum())
}

/// `‖⟦A, B, C⟧‖²_F = 1ᵀ(AᵀA ∗ BᵀB ∗ CᵀC)1`.
pub fn model_norm_sq(first: &DenseMatrix, second: &DenseMatrix, relation: &DenseMatrix) -> f64 {
    hadamard3_sum(&first.gram(), &second.gram(), &relation.gram())
}

/// `‖X − ⟦A, B, C⟧‖²_F` without densifying `X`.
///
/// Split as `Σ_stored (x − m)² + (‖M‖² − Σ_stored m²)`. The first part is
/// accurate near an exact fit, where the expanded form
/// `‖X‖² − 2⟨X, M⟩ + ‖M‖²` loses everything to cancellation. The second
/// part is the model energy off the support and vanishes identically for
/// blocks that store every cell.
pub fn residual_sq(
    x: &SparseBlockTensor,
    first: &DenseMatrix,
    second: &DenseMatrix,
    relation: &DenseMatrix,
) -> Result<f64> {
    residual_sq_with_grams(x, first, second, relation, &first.gram(), &second.gram())
}

/// [`residual_sq`] with precomputed entity Grams.
pub fn residual_sq_with_grams(
    x: &SparseBlockTensor,
    first: &DenseMatrix,
    second: &DenseMatrix,
    relation: &DenseMatrix,
    first_gram: &DenseMatrix,
    second_gram: &DenseMatrix,
) -> Result<f64> {
    let (rows, cols, k) = x.dims();
    check_rank("residual_sq", first, second)?;
    check_rank("residual_sq", first, relation)?;
    check_rows("residual_sq", "mode-1 factor", first, rows)?;
    check_rows("residual_sq", "mode-2 factor", second, cols)?;
    check_rows("residual_sq", "relation factor", relation, k)?;
    let mut on_support = 0.0;
    let mut model_on_support = 0.0;
    for (kk, slab) in x.slabs().iter().enumerate() {
        let (fit, energy) = slab_support_terms(slab, first, second, relation.row(kk));
        on_support += fit;
        model_on_support += energy;
    }
    let full = rows * cols * k;
    let off_support = if x.nnz() == full {
        0.0
    } else {
        let total = hadamard3_sum(first_gram, second_gram, &relation.gram());
        (total - model_on_support).max(0.0)
    };
    Ok(on_support + off_support)
}

/// `(Σ (x − m)², Σ m²)` over the stored entries of one slab.
fn slab_support_terms(slab: &Slab, first: &DenseMatrix, second: &DenseMatrix, c: &[f64]) -> (f64, f64) {
    let f = first.cols();
    let chunk = |start: usize| {
        let end = (start + MODE3_CHUNK_ROWS).min(slab.rows());
        let mut ac = vec![0.0; f];
        let (mut fit, mut energy) = (0.0, 0.0);
        for i in start..end {
            let (idx, vals) = slab.row(i);
            if idx.is_empty() {
                continue;
            }
            for ((o, &a), &cf) in ac.iter_mut().zip(first.row(i)).zip(c) {
                *o = a * cf;
            }
            for (p, &j) in idx.iter().enumerate() {
                let w = vals.map_or(1.0, |v| v[p]);
                let m: f64 = ac.iter().zip(second.row(j as usize)).map(|(a, b)| a * b).sum();
                fit += (w - m) * (w - m);
                energy += m * m;
            }
        }
        (fit, energy)
    };
    let starts: Vec<usize> = (0..slab.rows()).step_by(MODE3_CHUNK_ROWS).collect();
    let partials: Vec<(f64, f64)> = if slab.nnz() > MODE3_CHUNK_ROWS {
        starts.par_iter().map(|&s| chunk(s)).collect()
    } else {
        starts.iter().map(|&s| chunk(s)).collect()
    };
    partials.into_iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d))
}

fn check_rank(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::dim(op, format!("rank {} vs {}", a.cols(), b.cols())));
    }
    Ok(())
}

fn check_rows(op: &'static str, what: &str, a: &DenseMatrix, expected: usize) -> Result<()> {
    if a.rows() != expected {
        return Err(Error::dim(
            op,
            format!("{what} has {} rows, expected {expected}", a.rows()),
        ));
    }
    Ok(())
}

//! Dense reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texgraph::{BlockKey, BlockMap, DenseMatrix, FactorSet, Slab, SparseBlockTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize, k: usize, density: f64) -> SparseBlockTensor {
    let slabs = (0..k)
        .map(|_| {
            let coords = (0..rows)
                .flat_map(|i| (0..cols).map(move |j| (i as u32, j as u32)))
                .filter(|_| rng.random::<f64>() < density)
                .collect::<Vec<_>>();
            Slab::binary(rows, cols, coords).unwrap()
        })
        .collect();
    SparseBlockTensor::new(BlockKey { m: 0, n: 1 }, rows, cols, slabs).unwrap()
}

/// Unfolding along `mode` (0, 1, 2) with the usual column ordering:
/// mode 0 has column `k*J + j`, mode 1 `k*I + i`, mode 2 `j*I + i`.
pub fn unfold(x: &SparseBlockTensor, mode: usize) -> DMatrix<f64> {
    let (ni, nj, nk) = x.dims();
    match mode {
        0 => DMatrix::from_fn(ni, nj * nk, |i, c| x.get(i, c % nj, c / nj)),
        1 => DMatrix::from_fn(nj, ni * nk, |j, c| x.get(c % ni, j, c / ni)),
        _ => DMatrix::from_fn(nk, ni * nj, |k, c| x.get(c % ni, c / ni, k)),
    }
}

/// `U ⊙ V`: row `u*V.rows + v` is `U(u,:) ∗ V(v,:)`.
pub fn khatri_rao(u: &DenseMatrix, v: &DenseMatrix) -> DMatrix<f64> {
    let (nu, nv, f) = (u.rows(), v.rows(), u.cols());
    DMatrix::from_fn(nu * nv, f, |r, p| u[(r / nv, p)] * v[(r % nv, p)])
}

pub fn na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)])
}

/// Transposed MTTKRP of each mode via a materialized Khatri-Rao product.
pub fn dense_mttkrp(
    x: &SparseBlockTensor,
    mode: usize,
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
) -> DMatrix<f64> {
    let kr = match mode {
        0 => khatri_rao(c, b),
        1 => khatri_rao(c, a),
        _ => khatri_rao(b, a),
    };
    unfold(x, mode) * kr
}

/// `max |got - want| / max |want|` (absolute when `want` is zero).
pub fn rel_err(got: &DenseMatrix, want: &DMatrix<f64>) -> f64 {
    assert_eq!((got.rows(), got.cols()), want.shape());
    let diff = (0..got.rows())
        .flat_map(|i| (0..got.cols()).map(move |j| (i, j)))
        .map(|(i, j)| (got[(i, j)] - want[(i, j)]).abs())
        .fold(0.0, f64::max);
    let scale = want.amax();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Dense least squares via SVD.
pub fn lstsq(design: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    design.clone().svd(true, true).solve(target, 1e-14).unwrap()
}

/// Sum of squared residuals over every cell of every block.
pub fn dense_loss(blocks: &BlockMap, factors: &FactorSet) -> f64 {
    let mut total = 0.0;
    for (key, x) in blocks {
        let (a, b, c) = (&factors.entity[key.m], &factors.entity[key.n], &factors.relation[key]);
        let (ni, nj, nk) = x.dims();
        for k in 0..nk {
            for i in 0..ni {
                for j in 0..nj {
                    let m: f64 = (0..a.cols()).map(|f| a[(i, f)] * b[(j, f)] * c[(k, f)]).sum();
                    total += (x.get(i, j, k) - m).powi(2);
                }
            }
        }
    }
    total
}

pub fn data_norm(blocks: &BlockMap) -> f64 {
    blocks.values().map(SparseBlockTensor::frobenius_sq).sum()
}

/// Greedy matching of columns by |cosine|; returns the matched |cosines|
/// and the permutation (column of `a` -> column of `b`).
pub fn greedy_cosines(a: &DenseMatrix, b: &DenseMatrix) -> (Vec<f64>, Vec<usize>) {
    let f = a.cols();
    let norm = |m: &DenseMatrix, p: usize| m.column(p).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut pairs = Vec::new();
    for p in 0..f {
        for q in 0..f {
            let dot: f64 = a.column(p).iter().zip(b.column(q)).map(|(x, y)| x * y).sum();
            let cos = (dot / (norm(a, p) * norm(b, q))).abs();
            pairs.push((cos, p, q));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let (mut used_a, mut used_b) = (vec![false; f], vec![false; f]);
    let mut cos = vec![0.0; f];
    let mut perm = vec![0; f];
    for (c, p, q) in pairs {
        if !used_a[p] && !used_b[q] {
            used_a[p] = true;
            used_b[q] = true;
            cos[p] = c;
            perm[p] = q;
        }
    }
    (cos, perm)
}

/// |cosines| of the columns of `a` against the columns of `b` under `perm`.
pub fn matched_cosines(a: &DenseMatrix, b: &DenseMatrix, perm: &[usize]) -> Vec<f64> {
    perm.iter()
        .enumerate()
        .map(|(p, &q)| {
            let (x, y) = (a.column(p), b.column(q));
            let dot: f64 = x.iter().zip(&y).map(|(u, v)| u * v).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            (dot / (nx * ny)).abs()
        })
        .collect()
}

pub fn relation_dims(blocks: &BlockMap) -> Vec<(BlockKey, usize)> {
    blocks.iter().map(|(k, b)| (*k, b.dims().2)).collect()
}

pub fn zero_factors(type_sizes: &[usize], blocks: &BlockMap, rank: usize) -> FactorSet {
    let entity = type_sizes.iter().map(|&n| DenseMatrix::zeros(n, rank)).collect();
    let relation: BTreeMap<_, _> = blocks
        .iter()
        .map(|(k, b)| (*k, DenseMatrix::zeros(b.dims().2, rank)))
        .collect();
    FactorSet::new(rank, entity, relation).unwrap()
}

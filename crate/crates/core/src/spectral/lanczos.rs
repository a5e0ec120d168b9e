//! Thick-restart Lanczos for the largest-magnitude eigenpairs of a symmetric
//! operator given only as a matrix-vector product.
//!
//! The basis is fully reorthogonalized, so the projected matrix is the
//! Rayleigh quotient `VᵀAV` to working precision. On restart the
//! best Ritz vectors are kept along with the residual direction.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

const DOT_CHUNK: usize = 8192;

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Ritz residual bound, relative to the largest |eigenvalue|.
    pub tolerance: f64,
    pub max_restarts: usize,
    /// Basis size; default `max(2k+1, k+32)` capped at the dimension.
    pub basis: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            tolerance: 1e-6,
            max_restarts: 300,
            basis: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Sorted by decreasing magnitude.
    pub values: Vec<f64>,
    /// `n x k`, column `i` pairs with `values[i]`.
    pub vectors: DenseMatrix,
    pub residuals: Vec<f64>,
    pub restarts: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 * DOT_CHUNK {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let parts: Vec<f64> = a
        .par_chunks(DOT_CHUNK)
        .zip(b.par_chunks(DOT_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    parts.into_iter().sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if y.len() < 2 * DOT_CHUNK {
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
    } else {
        y.par_chunks_mut(DOT_CHUNK)
            .zip(x.par_chunks(DOT_CHUNK))
            .for_each(|(yc, xc)| yc.iter_mut().zip(xc).for_each(|(yi, xi)| *yi += alpha * xi));
    }
}

/// Classical Gram-Schmidt, repeated once when the first pass cancels more
/// than `1 - 1/√2` of the norm; returns the accumulated coefficients.
fn orthogonalize(basis: &[Vec<f64>], w: &mut [f64]) -> Vec<f64> {
    let mut h = vec![0.0; basis.len()];
    for _ in 0..2 {
        let before = dot(w, w);
        for (hi, v) in h.iter_mut().zip(basis) {
            let c = dot(v, w);
            *hi += c;
            axpy(-c, v, w);
        }
        if dot(w, w) > 0.5 * before {
            break;
        }
    }
    h
}

fn normalize(w: &mut [f64]) -> f64 {
    let norm = dot(w, w).sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Unit vector orthogonal to `basis`, or `None` once the space is exhausted.
fn random_orthogonal(basis: &[Vec<f64>], n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    if basis.len() >= n {
        return None;
    }
    for _ in 0..8 {
        let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let before = normalize(&mut w);
        orthogonalize(basis, &mut w);
        if normalize(&mut w) > 1e-8 * before {
            return Some(w);
        }
    }
    None
}

/// Largest-magnitude `k` eigenpairs of the symmetric `n x n` operator `op`,
/// which must overwrite its output with `A x`.
pub fn largest_magnitude<F>(n: usize, k: usize, op: F, opts: &LanczosOptions) -> Result<EigenPairs>
where
    F: Fn(&[f64], &mut [f64]),
{
    if k == 0 || k > n {
        return Err(Error::Invalid(format!(
            "cannot compute {k} eigenpairs of a {n}x{n} operator"
        )));
    }
    let m = opts
        .basis
        .unwrap_or((2 * k + 1).max(k + 32))
        .clamp(k + 1, n.max(k + 1))
        .min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = random_orthogonal(&[], n, &mut rng).expect("n >= 1");
    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut t = DMatrix::<f64>::zeros(m, m);
    let mut j = 0;
    let mut restarts = 0;
    let mut scale = 0.0f64;
    loop {
        // expand to m columns; coupling of the last column to basis[m]
        let mut beta = 0.0;
        while j < m {
            let mut w = vec![0.0; n];
            op(&basis[j], &mut w);
            scale = scale.max(dot(&w, &w).sqrt());
            let h = orthogonalize(&basis, &mut w);
            for (i, &hi) in h.iter().enumerate().take(m) {
                t[(i, j)] = hi;
                t[(j, i)] = hi;
            }
            let norm = normalize(&mut w);
            let next = if norm > 1e-12 * scale {
                beta = norm;
                Some(w)
            } else {
                beta = 0.0;
                random_orthogonal(&basis, n, &mut rng)
            };
            j += 1;
            match next {
                Some(v) => {
                    if j < m {
                        t[(j, j - 1)] = beta;
                        t[(j - 1, j)] = beta;
                    }
                    basis.push(v);
                }
                None => break,
            }
        }
        let size = j;
        let eig = t.view((0, 0), (size, size)).into_owned().symmetric_eigen();
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .abs()
                .total_cmp(&eig.eigenvalues[a].abs())
                .then(a.cmp(&b))
        });
        let top = eig.eigenvalues[order[0]].abs();
        let residual = |i: usize| (beta * eig.eigenvectors[(size - 1, i)]).abs();
        let residuals: Vec<f64> = order[..k].iter().map(|&i| residual(i)).collect();
        let converged = size < m || residuals.iter().all(|&r| r <= opts.tolerance * top);
        if converged {
            let vectors = ritz_vectors(&basis[..size], &eig.eigenvectors, &order[..k]);
            return Ok(EigenPairs {
                values: order[..k].iter().map(|&i| eig.eigenvalues[i]).collect(),
                vectors: DenseMatrix::from_fn(n, k, |r, c| vectors[c][r]),
                residuals,
                restarts,
            });
        }
        if restarts == opts.max_restarts {
            return Err(Error::NoConvergence { residuals });
        }
        restarts += 1;
        let keep = k + (m - k) / 2;
        let kept = ritz_vectors(&basis[..size], &eig.eigenvectors, &order[..keep]);
        let residual_dir = basis.pop().expect("full basis has a residual direction");
        t.fill(0.0);
        for (p, &i) in order[..keep].iter().enumerate() {
            t[(p, p)] = eig.eigenvalues[i];
            let c = beta * eig.eigenvectors[(size - 1, i)];
            t[(p, keep)] = c;
            t[(keep, p)] = c;
        }
        basis = kept;
        basis.push(residual_dir);
        j = keep;
    }
}

fn ritz_vectors(basis: &[Vec<f64>], s: &DMatrix<f64>, cols: &[usize]) -> Vec<Vec<f64>> {
    let n = basis[0].len();
    cols.iter()
        .map(|&c| {
            let mut y = vec![0.0; n];
            for (r, v) in basis.iter().enumerate() {
                axpy(s[(r, c)], v, &mut y);
            }
            y
        })
        .collect()
}

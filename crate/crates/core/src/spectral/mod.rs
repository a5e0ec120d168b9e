//! Spectral initialization from the symmetrized global tensor.
//!
//! All typed entities are concatenated into one index (types in order), every
//! relation becomes one slab, and each slab is symmetrized:
//! `Y(i,j,k) = min{1, Z(i,j,k) + Z(j,i,k)}`. A semi-symmetric CPD
//! `Y ≈ ⟦A, A, C⟧` is computed with the pencil method:
//!
//! 1. `S = Σ_k Y^k ≈ U Λ Uᵀ`, truncated to rank `F` by Lanczos;
//! 2. `M_k = Uᵀ Y^k U`;
//! 3. random aggregates `P = Σ w_k M_k`, `Q = Σ v_k M_k`, and the
//!    generalized eigenvectors `X` of `P x = λ Q x`;
//! 4. `A = U X⁻ᵀ`, `C(k,:) = diag(Xᵀ M_k X)`.
//!
//! `A` is then column-normalized, `C` refit by least squares, and the global
//! factors are scattered into one factor per type and block.

mod lanczos;

pub use lanczos::{largest_magnitude, EigenPairs, LanczosOptions};

use log::{debug, warn};
use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

use crate::als::update_relation_factor;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::factors::FactorSet;
use crate::ingest::{BlockMap, Edge, Triplet, TypedVocabulary};
use crate::kernels::residual_sq;
use crate::tensor::{BlockKey, Slab, SparseBlockTensor};

/// Pencil eigenvalues with `|imag| / |real|` above this are treated as complex.
pub const COMPLEX_TOLERANCE: f64 = 1e-6;
/// Relative reconstruction error above which the spectral result is dropped
/// for a random start.
pub const FALLBACK_RESIDUAL: f64 = 0.9;
/// Lanczos eigenvalues below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-12;
const Q_CONDITION_LIMIT: f64 = 1e12;

/// The symmetric global tensor over all entities, one slab per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalTensor {
    tensor: SparseBlockTensor,
}

impl GlobalTensor {
    /// Wrap a square tensor whose slabs are symmetric.
    pub fn from_tensor(tensor: SparseBlockTensor) -> Result<Self> {
        let (rows, cols, _) = tensor.dims();
        if rows != cols || !tensor.slabs().iter().all(Slab::is_symmetric) {
            return Err(Error::Invalid(
                "global tensor slabs must be square and symmetric".into(),
            ));
        }
        let tensor = if tensor.key().is_diagonal() {
            tensor
        } else {
            SparseBlockTensor::new(BlockKey { m: 0, n: 0 }, rows, cols, tensor.slabs().to_vec())?
        };
        Ok(GlobalTensor { tensor })
    }

    /// Symmetrized global tensor of resolved edges.
    pub fn from_edges(edges: &[Edge], vocab: &TypedVocabulary) -> Result<Self> {
        let offsets = vocab.type_offsets();
        let n = vocab.num_entities();
        let mut per_slab: Vec<Vec<(u32, u32)>> = vec![Vec::new(); vocab.num_relations()];
        for e in edges {
            let r = e.relation as usize;
            let info = vocab.relations().get(r).ok_or_else(|| Error::Lookup {
                kind: "relation index",
                id: r.to_string(),
            })?;
            let h = offsets[info.head_type] + e.head as usize;
            let t = offsets[info.tail_type] + e.tail as usize;
            if h >= n || t >= n {
                return Err(Error::dim(
                    "GlobalTensor::from_edges",
                    format!("edge {e:?} outside vocabulary"),
                ));
            }
            per_slab[r].push((h as u32, t as u32));
        }
        let slabs = per_slab
            .into_par_iter()
            .map(|coords| Slab::symmetrized(n, &coords))
            .collect::<Result<Vec<_>>>()?;
        Ok(GlobalTensor {
            tensor: SparseBlockTensor::new(BlockKey { m: 0, n: 0 }, n, n, slabs)?,
        })
    }

    /// Entity dimension `L_e`.
    pub fn dim(&self) -> usize {
        self.tensor.dims().0
    }

    /// Slab count `K_r`.
    pub fn num_slabs(&self) -> usize {
        self.tensor.dims().2
    }

    pub fn tensor(&self) -> &SparseBlockTensor {
        &self.tensor
    }

    pub fn nnz(&self) -> usize {
        self.tensor.nnz()
    }

    /// The tensor as a one-type, one-block problem for the ALS solver.
    pub fn as_blocks(&self) -> BlockMap {
        BTreeMap::from([(BlockKey { m: 0, n: 0 }, self.tensor.clone())])
    }

    /// `S = Σ_k Y^k` as one weighted slab.
    pub fn aggregate(&self) -> Result<Slab> {
        let n = self.dim();
        let mut entries: Vec<(u32, u32, f64)> = Vec::with_capacity(self.nnz());
        for slab in self.tensor.slabs() {
            entries.extend(slab.entries().map(|(i, j, v)| (i as u32, j as u32, v)));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (i, j) => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|e| e.2 != 0.0);
        Slab::weighted(n, n, merged)
    }
}

/// `y = S x`, parallel over rows.
fn slab_matvec(s: &Slab, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().enumerate().for_each(|(i, yi)| {
        let (idx, vals) = s.row(i);
        *yi = match vals {
            None => idx.iter().map(|&p| x[p as usize]).sum(),
            Some(v) => idx.iter().zip(v).map(|(&p, w)| w * x[p as usize]).sum(),
        };
    });
}

/// Build `Y` from raw triplets.
pub fn build_symmetrized(triplets: &[Triplet], vocab: &TypedVocabulary) -> Result<GlobalTensor> {
    let edges = triplets.iter().map(|t| vocab.edge(t)).collect::<Result<Vec<_>>>()?;
    GlobalTensor::from_edges(&edges, vocab)
}

/// Global factors: `A` is `L_e x F`, `C` is `K_r x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFactors {
    pub a: DenseMatrix,
    pub c: DenseMatrix,
}

/// Diagnostics of one spectral initialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `‖Y − ⟦A, A, C⟧‖_F / ‖Y‖_F` of the spectral factors.
    pub relative_residual: f64,
    pub lanczos_restarts: usize,
    pub lanczos_residuals: Vec<f64>,
    /// Eigenvector columns replaced by random orthonormal completions because
    /// the aggregate slab had rank below `F`.
    pub padded_columns: usize,
    pub complex_pairs: usize,
    /// Ridge added to `Q` before inversion (0 when well conditioned).
    pub q_ridge: f64,
    /// The spectral result was discarded for a seeded random start.
    pub fallback: bool,
}

fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rank-`rank` semi-symmetric CPD `Y ≈ ⟦A, A, C⟧` by the pencil method.
///
/// Falls back to seeded random factors, with a warning, when the spectral
/// factors reconstruct `Y` with relative error above [`FALLBACK_RESIDUAL`].
pub fn semi_symmetric_cpd(y: &GlobalTensor, rank: usize, seed: u64) -> Result<(GlobalFactors, SpectralReport)> {
    let (n, k) = (y.dim(), y.num_slabs());
    if rank == 0 || rank > n {
        return Err(Error::Invalid(format!("rank {rank} outside 1..={n}")));
    }
    if k < 2 {
        return Err(Error::Invalid(
            "the pencil method needs at least two relation slabs".into(),
        ));
    }
    if y.nnz() == 0 {
        return Err(Error::Invalid("global tensor has no nonzeros".into()));
    }
    let mut report = SpectralReport::default();

    let opts = LanczosOptions {
        seed,
        ..Default::default()
    };
    let clock = Instant::now();
    let aggregate = y.aggregate()?;
    let eig = largest_magnitude(n, rank, |x, out| slab_matvec(&aggregate, x, out), &opts)?;
    drop(aggregate);
    debug!(
        "lanczos: {} restarts, {:.2}s",
        eig.restarts,
        clock.elapsed().as_secs_f64()
    );
    report.lanczos_restarts = eig.restarts;
    report.lanczos_residuals = eig.residuals.clone();
    let mut u = eig.vectors;
    let top = eig.values[0].abs();
    let deficient: Vec<usize> = (0..rank)
        .filter(|&i| eig.values[i].abs() <= RANK_TOLERANCE * top)
        .collect();
    if !deficient.is_empty() {
        warn!(
            "aggregate slab has rank {} < {rank}; padding with random orthonormal columns",
            rank - deficient.len()
        );
        pad_columns(&mut u, &deficient, &mut seeded_rng(seed, 1));
        report.padded_columns = deficient.len();
    }

    let clock = Instant::now();
    let m = compress(y, &u);
    debug!("compression: {:.2}s", clock.elapsed().as_secs_f64());
    let mut rng = seeded_rng(seed, 2);
    let w: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let combine = |coef: &[f64]| {
        let mut acc = DMatrix::<f64>::zeros(rank, rank);
        for (mk, &c) in m.iter().zip(coef) {
            acc += mk * c;
        }
        acc
    };
    let (p, mut q) = (combine(&w), combine(&v));

    let sv = q.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0 && smax / smin < Q_CONDITION_LIMIT) {
        let ridge = 1e-12 * q.trace().abs().max(smax) / rank as f64;
        for i in 0..rank {
            q[(i, i)] += ridge;
        }
        report.q_ridge = ridge;
    }
    let pencil = q.lu().solve(&p).ok_or_else(|| Error::Singular {
        target: "pencil aggregate Q".into(),
        condition: f64::INFINITY,
    })?;
    let (x, complex_pairs) = pencil_eigenvectors(&pencil);
    report.complex_pairs = complex_pairs;
    if complex_pairs > 0 {
        warn!("{complex_pairs} complex pencil eigenvalue pair(s); using real and imaginary parts");
    }

    let x_inv_t = x
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular {
            target: "pencil eigenvectors".into(),
            condition: f64::INFINITY,
        })?
        .transpose();
    let a_na = u.to_na() * x_inv_t;
    let mut a = DenseMatrix::from_na(&a_na);
    let mut c = DenseMatrix::from_fn(k, rank, |kk, f| {
        let col = x.column(f);
        (col.transpose() * &m[kk] * col)[(0, 0)]
    });
    normalize_columns(&mut a, &mut c);

    let clock = Instant::now();
    // least-squares C for the normalized A
    let blocks = y.as_blocks();
    let key = BlockKey { m: 0, n: 0 };
    let mut factors = FactorSet::new(rank, vec![a], BTreeMap::from([(key, c)]))?;
    let refit = update_relation_factor(key, &blocks, &factors, 0.0)?;
    factors.relation.insert(key, refit);
    let a = factors.entity.pop().expect("one entity factor");
    let c = factors.relation.remove(&key).expect("one relation factor");

    let norm = y.tensor().frobenius_sq().sqrt();
    let residual = residual_sq(y.tensor(), &a, &a, &c)?.sqrt() / norm;
    report.relative_residual = residual;
    debug!("refit and residual: {:.2}s", clock.elapsed().as_secs_f64());
    if !(a.is_finite() && c.is_finite() && residual <= FALLBACK_RESIDUAL) {
        warn!("spectral init residual {residual:.3} above {FALLBACK_RESIDUAL}; using random init");
        report.fallback = true;
        let random = FactorSet::random_with_dims(&[n], &[(key, k)], rank, seed)?;
        let mut random_parts = random.entity;
        return Ok((
            GlobalFactors {
                a: random_parts.pop().expect("one entity factor"),
                c: random.relation[&key].clone(),
            },
            report,
        ));
    }
    Ok((GlobalFactors { a, c }, report))
}

/// `M_k = Uᵀ Y^k U` for every slab, from the nonempty rows of each slab.
fn compress(y: &GlobalTensor, u: &DenseMatrix) -> Vec<DMatrix<f64>> {
    let f = u.cols();
    y.tensor()
        .slabs()
        .par_iter()
        .map(|slab| {
            let mut m = DMatrix::<f64>::zeros(f, f);
            let mut z = vec![0.0; f];
            for i in 0..slab.rows() {
                let (idx, vals) = slab.row(i);
                if idx.is_empty() {
                    continue;
                }
                z.iter_mut().for_each(|x| *x = 0.0);
                for (p, &j) in idx.iter().enumerate() {
                    let w = vals.map_or(1.0, |v| v[p]);
                    for (zf, &uf) in z.iter_mut().zip(u.row(j as usize)) {
                        *zf += w * uf;
                    }
                }
                for (r, &ui) in u.row(i).iter().enumerate() {
                    for (s, &zs) in z.iter().enumerate() {
                        m[(r, s)] += ui * zs;
                    }
                }
            }
            m
        })
        .collect()
}

/// Replace the listed columns by random unit vectors orthogonal to the rest.
fn pad_columns(u: &mut DenseMatrix, cols: &[usize], rng: &mut ChaCha8Rng) {
    let (n, f) = (u.rows(), u.cols());
    let mut basis: Vec<Vec<f64>> = (0..f).filter(|c| !cols.contains(c)).map(|c| u.column(c)).collect();
    for &c in cols {
        let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= d * bi);
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|x| *x /= norm);
        for (r, &wr) in w.iter().enumerate() {
            u[(r, c)] = wr;
        }
        basis.push(w);
    }
}

/// Real eigenvector basis of a small non-symmetric matrix. Each complex
/// conjugate pair contributes the real and imaginary parts of one of its
/// eigenvectors. Returns the basis and the number of complex pairs.
pub fn pencil_eigenvectors(b: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let f = b.nrows();
    let mut values: Vec<Complex<f64>> = b.clone().schur().complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    let mut x = DMatrix::<f64>::zeros(f, f);
    let mut col = 0;
    let mut pairs = 0;
    for lambda in values {
        if col == f {
            break;
        }
        if lambda.im.abs() <= COMPLEX_TOLERANCE * lambda.re.abs() {
            let shifted = b - DMatrix::identity(f, f) * lambda.re;
            x.set_column(col, &null_vector_real(shifted));
            col += 1;
        } else if lambda.im > 0.0 && col + 1 < f {
            let shifted = b.map(|v| Complex::new(v, 0.0)) - DMatrix::identity(f, f) * lambda;
            let z = null_vector_complex(shifted);
            x.set_column(col, &z.map(|c| c.re));
            x.set_column(col + 1, &z.map(|c| c.im));
            col += 2;
            pairs += 1;
        }
    }
    (x, pairs)
}

fn null_vector_real(m: DMatrix<f64>) -> nalgebra::DVector<f64> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let last = svd.singular_values.len() - 1;
    let mut v = v_t.row(last).transpose();
    orient(&mut v);
    v
}

fn null_vector_complex(m: DMatrix<Complex<f64>>) -> nalgebra::DVector<Complex<f64>> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let last = svd.singular_values.len() - 1;
    let v = v_t.row(last).adjoint();
    // fix the arbitrary phase: largest component real and positive
    let (imax, _) = v.iter().enumerate().fold(
        (0, 0.0),
        |(bi, bn), (i, z)| if z.norm() > bn { (i, z.norm()) } else { (bi, bn) },
    );
    let phase = v[imax].conj() / v[imax].norm();
    v * phase
}

/// Flip sign so the largest-magnitude entry is positive.
fn orient(v: &mut nalgebra::DVector<f64>) {
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
}

/// Unit-norm columns of `A` (largest entry positive), scale squared into `C`.
fn normalize_columns(a: &mut DenseMatrix, c: &mut DenseMatrix) {
    let norms = a.column_norms();
    let mut scale_a = Vec::with_capacity(norms.len());
    for (f, &nrm) in norms.iter().enumerate() {
        let col = a.column(f);
        let peak = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let s = if nrm > 0.0 { 1.0 / nrm } else { 1.0 };
        scale_a.push(if peak < 0.0 { -s } else { s });
    }
    a.scale_columns(&scale_a);
    let scale_c: Vec<f64> = scale_a.iter().map(|s| 1.0 / (s * s)).collect();
    c.scale_columns(&scale_c);
}

/// Split global factors into per-type entity factors and per-block relation
/// factors.
pub fn scatter(global: &GlobalFactors, vocab: &TypedVocabulary) -> Result<FactorSet> {
    let rank = global.a.cols();
    if global.a.rows() != vocab.num_entities() || global.c.rows() != vocab.num_relations() || global.c.cols() != rank {
        return Err(Error::dim(
            "scatter",
            format!(
                "global factors {}x{} / {}x{} for {} entities and {} relations",
                global.a.rows(),
                global.a.cols(),
                global.c.rows(),
                global.c.cols(),
                vocab.num_entities(),
                vocab.num_relations()
            ),
        ));
    }
    let offsets = vocab.type_offsets();
    let entity = vocab
        .type_sizes()
        .iter()
        .zip(&offsets)
        .map(|(&len, &off)| global.a.row_range(off, off + len))
        .collect();
    let relation = vocab
        .blocks()
        .iter()
        .map(|(key, rels)| {
            let c = DenseMatrix::from_fn(rels.len(), rank, |s, f| global.c[(rels[s], f)]);
            (*key, c)
        })
        .collect();
    FactorSet::new(rank, entity, relation)
}

/// Inverse of [`scatter`].
pub fn gather(factors: &FactorSet, vocab: &TypedVocabulary) -> Result<GlobalFactors> {
    let rank = factors.rank();
    if factors.type_sizes() != vocab.type_sizes() {
        return Err(Error::dim("gather", "entity factor sizes differ from vocabulary"));
    }
    let parts: Vec<&DenseMatrix> = factors.entity.iter().collect();
    let a = DenseMatrix::vstack(&parts)?;
    let mut c = DenseMatrix::zeros(vocab.num_relations(), rank);
    for (r, info) in vocab.relations().iter().enumerate() {
        let block = factors
            .relation
            .get(&info.block)
            .ok_or_else(|| Error::dim("gather", format!("no relation factor for block {}", info.block)))?;
        if info.slab >= block.rows() {
            return Err(Error::dim(
                "gather",
                format!("block {} has no slab {}", info.block, info.slab),
            ));
        }
        c.row_mut(r).copy_from_slice(block.row(info.slab));
    }
    Ok(GlobalFactors { a, c })
}

/// Spectral initialization of the coupled model: build `Y`, factor it and
/// scatter.
pub fn spectral_init(
    edges: &[Edge],
    vocab: &TypedVocabulary,
    rank: usize,
    seed: u64,
) -> Result<(FactorSet, SpectralReport)> {
    let y = GlobalTensor::from_edges(edges, vocab)?;
    let (global, report) = semi_symmetric_cpd(&y, rank, seed)?;
    Ok((scatter(&global, vocab)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_vocabulary, resolve_edges, VocabOptions};

    fn toy_vocab() -> (TypedVocabulary, Vec<Edge>) {
        let triplets = vec![
            Triplet::new("A::1", "r", "B::1"),
            Triplet::new("A::2", "r", "B::2"),
            Triplet::new("A::3", "s", "A::1"),
            Triplet::new("B::2", "t", "B::1"),
        ];
        let vocab = build_vocabulary(&triplets, &VocabOptions::default()).unwrap();
        let edges = resolve_edges(&triplets, &vocab).unwrap();
        (vocab, edges)
    }

    #[test]
    fn single_triplet_gives_two_entries() {
        let (vocab, edges) = toy_vocab();
        let y = GlobalTensor::from_edges(&edges[..1], &vocab).unwrap();
        assert_eq!(y.nnz(), 2);
        assert_eq!(y.dim(), 5);
        assert_eq!(y.num_slabs(), 3);
    }

    #[test]
    fn scatter_splits_by_offsets() {
        let (vocab, _) = toy_vocab();
        let a = DenseMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
        let c = DenseMatrix::from_fn(3, 2, |i, j| (10 * i + j) as f64);
        let fs = scatter(
            &GlobalFactors {
                a: a.clone(),
                c: c.clone(),
            },
            &vocab,
        )
        .unwrap();
        assert_eq!(fs.entity[0], a.row_range(0, 3));
        assert_eq!(fs.entity[1], a.row_range(3, 5));
        let back = gather(&fs, &vocab).unwrap();
        assert_eq!(back.a, a);
        assert_eq!(back.c, c);
    }

    #[test]
    fn single_relation_is_rejected() {
        let (tensor, _, _) = crate::synth::semi_symmetric_instance(6, 1, 1, 0).unwrap();
        let y = GlobalTensor::from_tensor(tensor).unwrap();
        assert!(matches!(semi_symmetric_cpd(&y, 1, 0), Err(Error::Invalid(_))));
    }

    #[test]
    fn real_pencil_eigenvectors() {
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 0.0, 0.0, -1.0]);
        let (x, pairs) = pencil_eigenvectors(&b);
        assert_eq!(pairs, 0);
        let d = x.clone().try_inverse().unwrap() * &b * &x;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(d[(i, j)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn complex_pair_is_split() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let (x, pairs) = pencil_eigenvectors(&b);
        assert_eq!(pairs, 1);
        assert!(x.clone().try_inverse().is_some());
    }
}

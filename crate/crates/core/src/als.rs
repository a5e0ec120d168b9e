//! Alternating least squares for the coupled block model
//! `X_{m,n} ≈ ⟦A_m, A_n, C_{m,n}⟧`.
//!
//! A sweep updates every entity factor in type order, then every relation
//! factor in block-key order. Each update is a ridge-regularized linear solve
//! against the sparse MTTKRP right-hand side.
//!
//! For a diagonal block `(n,n)` the factor `A_n` appears twice. While `A_n`
//! is updated, its occurrence in the other mode is frozen at the pre-update
//! value, which keeps the update a linear solve. That solve minimizes the
//! frozen objective, not the true one, so for types with a diagonal block the
//! step is accepted only if the objective over the blocks touching the type
//! does not rise; otherwise it is halved back toward the previous factor.

use std::time::Instant;

use log::info;
use nalgebra::DMatrix;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::factors::{FactorSet, TrainConfig};
use crate::ingest::BlockMap;
use crate::kernels::{mttkrp_mode1, mttkrp_mode2, mttkrp_mode3, residual_sq_with_grams};
use crate::tensor::BlockKey;

/// Largest jitter tried before a system is declared singular.
const MAX_JITTER: f64 = 1e-2;
const MIN_JITTER: f64 = 1e-8;
/// Condition estimate above which a Cholesky factor is treated as singular.
const MAX_CONDITION: f64 = 1e14;
/// Step halvings tried for a diagonal-block entity update.
const MAX_BACKTRACK: usize = 30;

/// `S_n⁺ = {m : (m,n) ∈ S}` and `S_n⁻ = {p : (n,p) ∈ S}`, kept as block keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetIndex {
    plus: Vec<Vec<BlockKey>>,
    minus: Vec<Vec<BlockKey>>,
}

impl SubsetIndex {
    pub fn new(num_types: usize, blocks: &BlockMap) -> Self {
        let mut plus = vec![Vec::new(); num_types];
        let mut minus = vec![Vec::new(); num_types];
        for key in blocks.keys() {
            if key.n < num_types {
                plus[key.n].push(*key);
            }
            if key.m < num_types {
                minus[key.m].push(*key);
            }
        }
        SubsetIndex { plus, minus }
    }

    /// Blocks where type `n` is the second mode.
    pub fn plus(&self, n: usize) -> &[BlockKey] {
        &self.plus[n]
    }

    /// Blocks where type `n` is the first mode.
    pub fn minus(&self, n: usize) -> &[BlockKey] {
        &self.minus[n]
    }

    /// Total slab count over all blocks touching type `n`, counting a
    /// diagonal block once.
    pub fn slab_count(&self, n: usize, blocks: &BlockMap) -> usize {
        let mut keys: Vec<BlockKey> = self.plus[n].iter().chain(&self.minus[n]).copied().collect();
        keys.sort();
        keys.dedup();
        keys.iter().map(|k| blocks[k].dims().2).sum()
    }
}

/// Solve `(H + λI) Xᵀ = Mᵀ` for all rows of `rhs` (`rows x F`) at once.
///
/// On a failed or badly conditioned factorization the diagonal shift is
/// escalated tenfold until `MAX_JITTER`.
fn solve_normal(h: &DenseMatrix, rhs: DenseMatrix, ridge: f64, target: &dyn Fn() -> String) -> Result<DenseMatrix> {
    let f = h.rows();
    let rows = rhs.rows();
    let scale = {
        let tr: f64 = (0..f).map(|i| h[(i, i)]).sum::<f64>() / f as f64;
        if tr > 0.0 && tr.is_finite() {
            tr.max(1.0)
        } else {
            1.0
        }
    };
    let mut shift = ridge;
    let mut condition = f64::INFINITY;
    loop {
        let mut sys = h.to_na();
        for i in 0..f {
            sys[(i, i)] += shift;
        }
        if let Some(chol) = sys.cholesky() {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
            condition = (hi / lo).powi(2);
            if lo > 0.0 && condition < MAX_CONDITION {
                // rhs is row-major rows x F, i.e. column-major F x rows
                let mut b = DMatrix::from_vec(f, rows, rhs.into_vec());
                chol.solve_mut(&mut b);
                return DenseMatrix::from_vec(rows, f, b.data.as_vec().clone());
            }
        }
        let next = (shift.max(MIN_JITTER) * 10.0).min(MAX_JITTER * scale);
        if next <= shift || shift >= MAX_JITTER * scale {
            return Err(Error::Singular {
                target: target(),
                condition,
            });
        }
        log::debug!("{}: raising diagonal shift to {next:e}", target());
        shift = next;
    }
}

/// New `A_n` with every other factor held fixed.
pub fn update_entity_factor(
    n: usize,
    blocks: &BlockMap,
    subsets: &SubsetIndex,
    factors: &FactorSet,
    ridge: f64,
) -> Result<DenseMatrix> {
    let f = factors.rank();
    let current = &factors.entity[n];
    let mut rhs = DenseMatrix::zeros(current.rows(), f);
    let mut h = DenseMatrix::zeros(f, f);
    let relation = |key: &BlockKey| {
        factors
            .relation
            .get(key)
            .ok_or_else(|| Error::dim("update_entity_factor", format!("no relation factor for {key}")))
    };

    for key in subsets.plus(n) {
        let x = &blocks[key];
        let c = relation(key)?;
        let other = &factors.entity[key.m];
        let weight = c.gram().hadamard(&other.gram())?;
        if key.is_diagonal() && x.is_symmetric() {
            // both occurrences contribute the same mode-1/mode-2 product
            let mut m = mttkrp_mode2(x, current, c)?;
            m.scale(2.0);
            rhs.add_assign(&m)?;
            let mut w = weight;
            w.scale(2.0);
            h.add_assign(&w)?;
        } else {
            rhs.add_assign(&mttkrp_mode2(x, other, c)?)?;
            h.add_assign(&weight)?;
        }
    }
    for key in subsets.minus(n) {
        let x = &blocks[key];
        if key.is_diagonal() && x.is_symmetric() {
            continue;
        }
        let c = relation(key)?;
        let other = &factors.entity[key.n];
        rhs.add_assign(&mttkrp_mode1(x, other, c)?)?;
        h.add_assign(&c.gram().hadamard(&other.gram())?)?;
    }
    solve_normal(&h, rhs, ridge, &|| format!("entity type {n}"))
}

/// New `C_{m,n}` with both entity factors held fixed.
pub fn update_relation_factor(
    key: BlockKey,
    blocks: &BlockMap,
    factors: &FactorSet,
    ridge: f64,
) -> Result<DenseMatrix> {
    let x = blocks
        .get(&key)
        .ok_or_else(|| Error::dim("update_relation_factor", format!("no block {key}")))?;
    let (am, an) = (&factors.entity[key.m], &factors.entity[key.n]);
    let h = an.gram().hadamard(&am.gram())?;
    let rhs = mttkrp_mode3(x, am, an)?;
    solve_normal(&h, rhs, ridge, &|| format!("relation block {key}"))
}

/// `Σ_blocks ‖X − ⟦A_m, A_n, C⟧‖²_F` computed from stored entries and Grams.
pub fn data_loss(blocks: &BlockMap, factors: &FactorSet) -> Result<f64> {
    let grams: Vec<DenseMatrix> = factors.entity.iter().map(DenseMatrix::gram).collect();
    let mut total = 0.0;
    for (key, x) in blocks {
        let c = factors
            .relation
            .get(key)
            .ok_or_else(|| Error::dim("total_loss", format!("no relation factor for {key}")))?;
        let (am, an) = (&factors.entity[key.m], &factors.entity[key.n]);
        total += residual_sq_with_grams(x, am, an, c, &grams[key.m], &grams[key.n])?;
    }
    Ok(total)
}

/// Data loss plus `λ` times the squared norm of every factor.
pub fn total_loss(blocks: &BlockMap, factors: &FactorSet, ridge: f64) -> Result<f64> {
    Ok(data_loss(blocks, factors)? + ridge * factors.norm_sq())
}

pub fn data_norm_sq(blocks: &BlockMap) -> f64 {
    blocks.values().map(|b| b.frobenius_sq()).sum()
}

/// Entities (per type) with no stored entry in any block.
pub fn zero_degree_entities(type_sizes: &[usize], blocks: &BlockMap) -> Vec<Vec<usize>> {
    let mut degree: Vec<Vec<usize>> = type_sizes.iter().map(|&n| vec![0; n]).collect();
    for (key, x) in blocks {
        for slab in x.slabs() {
            for (i, d) in degree[key.m].iter_mut().enumerate() {
                *d += slab.row(i).0.len();
            }
            for (j, d) in degree[key.n].iter_mut().enumerate() {
                *d += slab.col(j).0.len();
            }
        }
    }
    degree
        .iter()
        .map(|d| d.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub factors: FactorSet,
    /// Regularized loss of the initial factors.
    pub initial_loss: f64,
    /// Regularized loss after each completed sweep.
    pub loss_trace: Vec<f64>,
    /// Wall time of each sweep in seconds.
    pub sweep_seconds: Vec<f64>,
}

impl FitResult {
    pub fn sweeps(&self) -> usize {
        self.loss_trace.len()
    }
}

/// Regularized objective restricted to the blocks that involve type `n`.
pub fn local_loss(n: usize, blocks: &BlockMap, subsets: &SubsetIndex, factors: &FactorSet, ridge: f64) -> Result<f64> {
    let mut total = ridge * factors.entity[n].frobenius_sq();
    for key in subsets
        .plus(n)
        .iter()
        .chain(subsets.minus(n).iter().filter(|k| !k.is_diagonal()))
    {
        let (am, an) = (&factors.entity[key.m], &factors.entity[key.n]);
        let c = &factors.relation[key];
        total += residual_sq_with_grams(&blocks[key], am, an, c, &am.gram(), &an.gram())?;
    }
    Ok(total)
}

fn accept_guarded(
    n: usize,
    candidate: DenseMatrix,
    blocks: &BlockMap,
    subsets: &SubsetIndex,
    factors: &mut FactorSet,
    ridge: f64,
) -> Result<()> {
    let before = local_loss(n, blocks, subsets, factors, ridge)?;
    let old = std::mem::replace(&mut factors.entity[n], candidate);
    let mut step = 1.0;
    for _ in 0..MAX_BACKTRACK {
        if local_loss(n, blocks, subsets, factors, ridge)? <= before {
            return Ok(());
        }
        step *= 0.5;
        let target = &mut factors.entity[n];
        for (t, &o) in target.as_mut_slice().iter_mut().zip(old.as_slice()) {
            *t = o + 0.5 * (*t - o);
        }
    }
    log::debug!("entity factor {n}: no descent along frozen step, kept (step {step:e})");
    factors.entity[n] = old;
    Ok(())
}

/// One sweep in place: entity types ascending, then blocks in key order.
pub fn sweep(
    blocks: &BlockMap,
    subsets: &SubsetIndex,
    factors: &mut FactorSet,
    ridge: f64,
    sweep_index: usize,
) -> Result<()> {
    for n in 0..factors.num_types() {
        if subsets.plus(n).is_empty() && subsets.minus(n).is_empty() {
            continue;
        }
        let a = update_entity_factor(n, blocks, subsets, factors, ridge)?;
        if !a.is_finite() {
            return Err(Error::NonFinite {
                target: format!("entity factor {n}"),
                sweep: sweep_index,
            });
        }
        if subsets.plus(n).iter().any(BlockKey::is_diagonal) {
            accept_guarded(n, a, blocks, subsets, factors, ridge)?;
        } else {
            factors.entity[n] = a;
        }
    }
    for key in blocks.keys() {
        let c = update_relation_factor(*key, blocks, factors, ridge)?;
        if !c.is_finite() {
            return Err(Error::NonFinite {
                target: format!("relation factor {key}"),
                sweep: sweep_index,
            });
        }
        factors.relation.insert(*key, c);
    }
    Ok(())
}

/// Run ALS sweeps from `init` until `max_sweeps` or until the relative loss
/// drop of a sweep falls below `config.tolerance`.
pub fn fit(blocks: &BlockMap, config: &TrainConfig, init: FactorSet) -> Result<FitResult> {
    config.validate()?;
    init.validate(blocks)?;
    if init.rank() != config.rank {
        return Err(Error::dim(
            "fit",
            format!("init rank {} but config rank {}", init.rank(), config.rank),
        ));
    }
    let subsets = SubsetIndex::new(init.num_types(), blocks);
    let mut factors = init;
    let initial_loss = total_loss(blocks, &factors, config.ridge)?;
    let mut trace = Vec::with_capacity(config.max_sweeps);
    let mut times = Vec::with_capacity(config.max_sweeps);
    let mut prev = initial_loss;
    for s in 0..config.max_sweeps {
        let start = Instant::now();
        sweep(blocks, &subsets, &mut factors, config.ridge, s)?;
        let loss = total_loss(blocks, &factors, config.ridge)?;
        let secs = start.elapsed().as_secs_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                target: "loss".into(),
                sweep: s,
            });
        }
        info!("sweep {:>4}  loss {:.12e}  {:.3}s", s + 1, loss, secs);
        trace.push(loss);
        times.push(secs);
        let drop = if prev > 0.0 { (prev - loss) / prev } else { 0.0 };
        prev = loss;
        if config.tolerance > 0.0 && drop < config.tolerance {
            break;
        }
    }
    Ok(FitResult {
        factors,
        initial_loss,
        loss_trace: trace,
        sweep_seconds: times,
    })
}

//! Synthetic coupled instances: exactly low-rank real-valued blocks built
//! from known factors, random binary graphs, and a mock triplet file with
//! the DRKG block schema.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::factors::FactorSet;
use crate::ingest::{BlockMap, Triplet};
use crate::tensor::{BlockKey, Slab, SparseBlockTensor};

/// Ground-truth factors and the dense blocks they generate.
#[derive(Debug, Clone)]
pub struct SyntheticCoupled {
    pub truth: FactorSet,
    pub blocks: BlockMap,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Dense slabs of `⟦A, B, C⟧`.
pub fn model_block(key: BlockKey, a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<SparseBlockTensor> {
    let f = a.cols();
    let slabs: Vec<Vec<f64>> = (0..c.rows())
        .map(|k| {
            let mut v = Vec::with_capacity(a.rows() * b.rows());
            for i in 0..a.rows() {
                for j in 0..b.rows() {
                    v.push((0..f).map(|p| a[(i, p)] * b[(j, p)] * c[(k, p)]).sum());
                }
            }
            v
        })
        .collect();
    SparseBlockTensor::from_dense(key, a.rows(), b.rows(), &slabs)
}

/// Exactly rank-`rank` coupled instance with standard-normal factors.
///
/// `spec` lists `(m, n, K)` per block with `m <= n`.
pub fn coupled_instance(
    type_sizes: &[usize],
    spec: &[(usize, usize, usize)],
    rank: usize,
    seed: u64,
) -> Result<SyntheticCoupled> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entity: Vec<DenseMatrix> = type_sizes.iter().map(|&n| gaussian(&mut rng, n, rank)).collect();
    let mut relation = BTreeMap::new();
    let mut blocks = BTreeMap::new();
    for &(m, n, k) in spec {
        if m > n || n >= type_sizes.len() {
            return Err(Error::Invalid(format!("bad block ({m},{n})")));
        }
        let key = BlockKey { m, n };
        let c = gaussian(&mut rng, k, rank);
        blocks.insert(key, model_block(key, &entity[m], &entity[n], &c)?);
        relation.insert(key, c);
    }
    Ok(SyntheticCoupled {
        truth: FactorSet::new(rank, entity, relation)?,
        blocks,
    })
}

/// Exactly rank-`rank` semi-symmetric tensor `⟦A, A, C⟧` of size
/// `entities x entities x relations`, returned as a single diagonal block
/// together with `(A, C)`.
pub fn semi_symmetric_instance(
    entities: usize,
    relations: usize,
    rank: usize,
    seed: u64,
) -> Result<(SparseBlockTensor, DenseMatrix, DenseMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian(&mut rng, entities, rank);
    let c = gaussian(&mut rng, relations, rank);
    let key = BlockKey { m: 0, n: 0 };
    Ok((model_block(key, &a, &a, &c)?, a, c))
}

/// Random binary blocks with the given density; diagonal blocks symmetrized.
pub fn random_binary_blocks(
    type_sizes: &[usize],
    spec: &[(usize, usize, usize)],
    density: f64,
    seed: u64,
) -> Result<BlockMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = BTreeMap::new();
    for &(m, n, k) in spec {
        let key = BlockKey { m, n };
        let (rows, cols) = (type_sizes[m], type_sizes[n]);
        let slabs = (0..k)
            .map(|_| {
                let mut coords = Vec::new();
                for i in 0..rows {
                    let j0 = if key.is_diagonal() { i } else { 0 };
                    for j in j0..cols {
                        if rng.random::<f64>() < density {
                            coords.push((i as u32, j as u32));
                        }
                    }
                }
                if key.is_diagonal() {
                    Slab::symmetrized(rows, &coords)
                } else {
                    Slab::binary(rows, cols, coords)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.insert(key, SparseBlockTensor::new(key, rows, cols, slabs)?);
    }
    Ok(blocks)
}

/// Triplets of a random typed graph: types `T0, T1, ..`, entity `i` of type
/// `m` named `T{m}::e{i}`, relation `k` of block `(m,n)` named `r{m}_{n}_{k}`.
/// Every possible edge is drawn independently with probability `density`;
/// same-type pairs are drawn once per unordered pair.
pub fn random_typed_graph(
    type_sizes: &[usize],
    spec: &[(usize, usize, usize)],
    density: f64,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Invalid(format!("density {density} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &(m, n, k) in spec {
        if m > n || n >= type_sizes.len() || k == 0 {
            return Err(Error::Invalid(format!("bad block ({m},{n}) with {k} slabs")));
        }
        for slab in 0..k {
            let rel = format!("r{m}_{n}_{slab}");
            for i in 0..type_sizes[m] {
                let j0 = if m == n { i } else { 0 };
                for j in j0..type_sizes[n] {
                    if rng.random::<f64>() < density {
                        out.push(Triplet::new(format!("T{m}::e{i}"), rel.clone(), format!("T{n}::e{j}")));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Entity types of the drug-repurposing graph in block-table order, with
/// entity counts.
pub const DRKG_TYPES: [(&str, usize); 13] = [
    ("Gene", 39_220),
    ("Compound", 24_313),
    ("Disease", 5_103),
    ("Anatomy", 400),
    ("Tax", 215),
    ("Biological Process", 11_381),
    ("Cellular Component", 1_391),
    ("Pathway", 1_822),
    ("Molecular Function", 2_884),
    ("Atc", 4_048),
    ("Side Effect", 5_701),
    ("Pharmacologic Class", 345),
    ("Symptom", 415),
];

/// `(m, n, relation count)` of the 17 blocks, type indices into [`DRKG_TYPES`].
pub const DRKG_BLOCKS: [(usize, usize, usize); 17] = [
    (0, 0, 32),
    (0, 1, 34),
    (0, 2, 15),
    (0, 3, 3),
    (0, 4, 1),
    (0, 5, 1),
    (0, 6, 1),
    (0, 7, 1),
    (0, 8, 1),
    (1, 1, 2),
    (1, 2, 10),
    (1, 9, 1),
    (1, 10, 1),
    (1, 11, 1),
    (2, 2, 1),
    (2, 3, 1),
    (2, 12, 1),
];

#[derive(Debug, Clone)]
pub struct MockOptions {
    /// Scale all type sizes by this factor (at least one entity per type).
    pub entity_scale: f64,
    /// Random edges per relation on top of the coverage edges.
    pub edges_per_relation: usize,
    pub seed: u64,
}

impl Default for MockOptions {
    fn default() -> Self {
        MockOptions {
            entity_scale: 1.0,
            edges_per_relation: 2_000,
            seed: 0,
        }
    }
}

/// Relation names of the compound-disease block used by the mock, in slab
/// order. The drug-repurposing protocol scores the `treats` and `inhibits`
/// slabs.
pub fn mock_relation_name(m: usize, n: usize, k: usize) -> String {
    let (tm, tn) = (DRKG_TYPES[m].0, DRKG_TYPES[n].0);
    match (m, n, k) {
        (1, 2, 0) => format!("GNBR::T::{tm}:{tn}"),
        (1, 2, 1) => "DRUGBANK::treats::Compound:Disease".to_string(),
        (1, 2, 8) => "GNBR::C::Compound:Disease".to_string(),
        _ => format!("MOCK::r{k}::{tm}:{tn}"),
    }
}

/// Triplets with the DRKG type/block schema. Every entity of every type
/// appears in at least one triplet, so ingestion recovers the type sizes
/// exactly; the first triplets list entities in type order so the
/// first-appearance type order matches the block table.
pub fn drkg_mock(opts: &MockOptions) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sizes: Vec<usize> = DRKG_TYPES
        .iter()
        .map(|&(_, n)| ((n as f64 * opts.entity_scale).round() as usize).max(1))
        .collect();
    let name = |t: usize, i: usize| format!("{}::{}{:06}", DRKG_TYPES[t].0, &DRKG_TYPES[t].0[..1], i);
    // one block per type carries its coverage edges
    let mut home: Vec<Option<usize>> = vec![None; DRKG_TYPES.len()];
    for (b, &(m, n, _)) in DRKG_BLOCKS.iter().enumerate() {
        for t in [m, n] {
            home[t].get_or_insert(b);
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |t: Triplet, out: &mut Vec<Triplet>| {
        if seen.insert(t.clone()) {
            out.push(t);
        }
    };
    // coverage: walk types in order so first appearance follows the table
    for t in 0..DRKG_TYPES.len() {
        let b = home[t].expect("every type has a block");
        let (m, n, k) = DRKG_BLOCKS[b];
        let partner = if m == t { n } else { m };
        for i in 0..sizes[t] {
            let j = rng.random_range(0..sizes[partner]);
            let slab = rng.random_range(0..k);
            let rel = mock_relation_name(m, n, slab);
            let (h, tl) = if m == t {
                (name(t, i), name(partner, j))
            } else {
                (name(partner, j), name(t, i))
            };
            push(Triplet::new(h, rel, tl), &mut out);
        }
    }
    for &(m, n, k) in DRKG_BLOCKS.iter() {
        for slab in 0..k {
            let rel = mock_relation_name(m, n, slab);
            let mut order: Vec<usize> = (0..opts.edges_per_relation).collect();
            order.shuffle(&mut rng);
            for _ in order {
                let i = rng.random_range(0..sizes[m]);
                let j = rng.random_range(0..sizes[n]);
                push(Triplet::new(name(m, i), rel.clone(), name(n, j)), &mut out);
            }
        }
    }
    out
}

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::ingest::BlockMap;
use crate::tensor::BlockKey;

/// Entity factors `A_n` (one per type, `L_n x F`) and relation factors
/// `C_{m,n}` (one per block, `K_{m,n} x F`).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    rank: usize,
    pub entity: Vec<DenseMatrix>,
    pub relation: BTreeMap<BlockKey, DenseMatrix>,
}

impl FactorSet {
    pub fn new(rank: usize, entity: Vec<DenseMatrix>, relation: BTreeMap<BlockKey, DenseMatrix>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Invalid("rank must be at least 1".into()));
        }
        let bad_entity = entity.iter().any(|a| a.cols() != rank);
        let bad_relation = relation.values().any(|c| c.cols() != rank);
        if bad_entity || bad_relation {
            return Err(Error::dim(
                "FactorSet::new",
                format!("factors must have {rank} columns"),
            ));
        }
        Ok(FactorSet { rank, entity, relation })
    }

    /// Entries i.i.d. uniform(0,1) scaled by `1/√F`; entity types first, then
    /// blocks in key order.
    pub fn random(type_sizes: &[usize], blocks: &BlockMap, rank: usize, seed: u64) -> Result<Self> {
        let dims: Vec<(BlockKey, usize)> = blocks.iter().map(|(k, b)| (*k, b.dims().2)).collect();
        Self::random_with_dims(type_sizes, &dims, rank, seed)
    }

    pub fn random_with_dims(
        type_sizes: &[usize],
        block_slabs: &[(BlockKey, usize)],
        rank: usize,
        seed: u64,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Invalid("rank must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (rank as f64).sqrt();
        let mut draw = |rows: usize| DenseMatrix::from_fn(rows, rank, |_, _| rng.random::<f64>() * scale);
        let entity = type_sizes.iter().map(|&n| draw(n)).collect();
        let relation = block_slabs.iter().map(|&(k, s)| (k, draw(s))).collect();
        Self::new(rank, entity, relation)
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_types(&self) -> usize {
        self.entity.len()
    }

    pub fn type_sizes(&self) -> Vec<usize> {
        self.entity.iter().map(DenseMatrix::rows).collect()
    }

    /// Check shapes against a block map.
    pub fn validate(&self, blocks: &BlockMap) -> Result<()> {
        for (key, block) in blocks {
            let (rows, cols, k) = block.dims();
            let (am, an) = match (self.entity.get(key.m), self.entity.get(key.n)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::dim("FactorSet", format!("no entity factor for block {key}"))),
            };
            if am.rows() != rows || an.rows() != cols {
                return Err(Error::dim(
                    "FactorSet",
                    format!(
                        "block {key} is {rows}x{cols} but factors have {} and {} rows",
                        am.rows(),
                        an.rows()
                    ),
                ));
            }
            match self.relation.get(key) {
                Some(c) if c.rows() == k => {}
                Some(c) => {
                    return Err(Error::dim(
                        "FactorSet",
                        format!("block {key} has {k} slabs, relation factor {} rows", c.rows()),
                    ))
                }
                None => return Err(Error::dim("FactorSet", format!("no relation factor for block {key}"))),
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entity.iter().all(DenseMatrix::is_finite) && self.relation.values().all(DenseMatrix::is_finite)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entity.iter().map(DenseMatrix::frobenius_sq).sum::<f64>()
            + self.relation.values().map(DenseMatrix::frobenius_sq).sum::<f64>()
    }
}

/// Rank, initialization and stopping parameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    pub max_sweeps: usize,
    pub ridge: f64,
    /// Stop when the relative loss drop of a sweep falls below this; 0 runs every sweep.
    pub tolerance: f64,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: 50,
            max_sweeps: 10,
            ridge: 1e-8,
            tolerance: 0.0,
            seed: 0,
            init: InitMode::Spectral,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Invalid("rank must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Invalid(format!(
                "ridge must be finite and >= 0, got {}",
                self.ridge
            )));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Invalid("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Random,
    Spectral,
}

impl std::str::FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(InitMode::Random),
            "spectral" => Ok(InitMode::Spectral),
            other => Err(format!("unknown init mode {other:?}")),
        }
    }
}

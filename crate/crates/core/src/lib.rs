//! Coupled tensor-matrix factorization of typed knowledge graphs.
//!
//! A knowledge graph with typed entities is split into one sparse binary
//! tensor per pair of entity types, `X_{m,n}`, whose frontal slabs are the
//! adjacency matrices of the relations linking those types. All tensors are
//! factored jointly as `X_{m,n} ≈ ⟦A_m, A_n, C_{m,n}⟧`, so each entity type
//! gets one embedding matrix shared by every block it appears in.
//!
//! Pipeline: [`ingest`] builds vocabularies and blocks, [`spectral`] computes
//! an algebraic initialization from the symmetrized global tensor, [`als`]
//! refines it, and [`scoring`] ranks candidate links.

pub mod als;
pub mod dense;
pub mod error;
pub mod factors;
pub mod ingest;
pub mod kernels;
pub mod persist;
pub mod scoring;
pub mod spectral;
pub mod synth;
pub mod tensor;

pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use factors::{FactorSet, InitMode, TrainConfig};
pub use ingest::{BlockMap, Edge, Triplet, TypedVocabulary};
pub use tensor::{BlockKey, Slab, SparseBlockTensor};

//! Decentralized cross-silo federated-learning orchestration.
//!
//! Independent clusters ("silos") exchange aggregated models through a
//! content-addressed store, coordinate through a ledger state machine that
//! assigns randomized majority scorers to every submitted model, and merge
//! peer models according to per-aggregator policies. [`sim`] drives the whole
//! protocol through a deterministic discrete-event simulation in either
//! synchronous or asynchronous mode.

pub mod aggregation;
pub mod cas;
pub mod harness;
pub mod learner;
pub mod ledger;
pub mod policy;
pub mod scalar;
pub mod scoring;
pub mod sim;
pub mod weights;

pub use cas::{Cid, ContentStore, DiskStore, MemoryStore};
pub use ledger::{AggregatorId, Ledger, LedgerEvent, Mode};
pub use policy::{Candidate, PolicyKind, PolicySpec};
pub use scalar::Scalar;
pub use scoring::{ScoreReduce, ScoringAlgorithm};
pub use weights::{LayerShape, ModelBytes, WeightVector};

/// Parameters at the canonical wire precision.
pub type Weights = WeightVector<f64>;
pub type Weights32 = WeightVector<f32>;
pub type Dataset = learner::Dataset<f64>;
pub type Dataset32 = learner::Dataset<f32>;

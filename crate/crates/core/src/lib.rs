//! lumpkit: state space reduction of Markov chains with certified error
//! bounds.
//!
//! The library aggregates discrete- and continuous-time Markov chains via
//! weighted state-space partitions or abstract linear reductions, computes
//! certified bounds on the transient and stationary approximation error,
//! decides lumpability properties, and searches for low-error partitions.

pub mod aggregation;
pub mod benchlab;
pub mod bounds;
pub mod chain;
pub mod error;
pub mod io;
pub mod linalg;
mod lp;
pub mod lumpability;
pub mod schur;
pub mod search;
pub mod sparse;

pub use aggregation::{AlphaWeights, Disaggregation, DisaggregationMode, Partition, ReducedModel};
pub use chain::{DistVector, GeneratorMatrix, MarkovChain, TransitionMatrix, DEFAULT_TOL};
pub use error::{Error, Result};
pub use sparse::SparseMatrix;

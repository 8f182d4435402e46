//! Complementary concept generation harness.
//!
//! Builds co-purchase concept datasets, serializes ranked complement lists
//! into a list grammar, trains a compact list-generating language model and
//! several embedding baselines, and scores predictions with dedup-aware
//! accuracy and confidence-weighted nDCG.

pub mod baselines;
pub mod concept;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod explain;
pub mod listlm;
pub mod metrics;
pub mod prediction;
pub mod serialize;
pub mod synth;

pub use concept::{Concept, ConceptId, ConceptSet, RankedList};
pub use error::{Error, Result};
pub use prediction::{PredictionRecord, Slot};

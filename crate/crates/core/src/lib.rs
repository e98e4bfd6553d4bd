//! Continual-learning evaluation toolkit for repository-issue benchmarks.
//!
//! The pipeline turns a corpus of issue-resolution tasks into per-repository
//! learning sequences, runs an agent over them while recording a performance
//! matrix, and reduces the matrix to continual-learning metrics. Supporting
//! modules cover task similarity, an experience memory, model access and a
//! context-poisoning (drift) probe.

pub mod dataset;
pub mod diff;
pub mod drift;
pub mod gateway;
pub mod memory;
pub mod metrics;
pub mod runner;
pub mod sequence;
pub mod similarity;

use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

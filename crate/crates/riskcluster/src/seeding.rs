//! Sub-seed derivation so every stochastic stage gets an independent stream
//! that depends only on (master seed, stage name, task index), never on
//! execution order.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, stage: &str, task_index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update(task_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Sub-seed keyed by a row set instead of a task index, so two models over
/// the same rows draw identical streams regardless of which experiment
/// built them.
pub fn derive_seed_for_rows(master: u64, stage: &str, rows: &[usize]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stage.as_bytes());
    for &r in rows {
        hasher.update((r as u64).to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

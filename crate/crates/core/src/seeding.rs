//! Deterministic seed fan-out.
//!
//! Every randomized component receives its own seed derived from one
//! master seed and a component name, so adding or reordering components
//! never shifts the random stream another component sees.

use sha2::{Digest, Sha256};

/// Derives a component seed from a master seed and a component name.
///
/// The derivation hashes the little-endian master seed followed by the
/// component name and takes the first eight digest bytes. Distinct
/// names give statistically independent streams.
pub fn derive_seed(master: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest shorter than 8 bytes"))
}

//! Order-independent seed derivation.
//!
//! Every random decision in the simulator is keyed by the global seed plus the
//! identifiers of the thing being decided (query, iteration, generator, ...),
//! so results do not depend on execution order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hashes `global_seed` together with an ordered list of key parts.
pub fn derive_seed(global_seed: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A uniform draw in `[0, 1)` fixed by the key.
pub fn unit_draw(global_seed: u64, parts: &[&str]) -> f64 {
    // 53 high bits -> exactly representable f64 in [0, 1)
    (derive_seed(global_seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn keyed_rng(global_seed: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, parts))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

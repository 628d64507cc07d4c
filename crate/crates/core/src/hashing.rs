//! Stable hashing and seeded random streams.
//!
//! Every random draw in the pipeline goes through [`keyed_rng`]: a ChaCha8
//! stream seeded with `seed XOR h(key)`, where `h` is the first eight bytes
//! (little-endian) of the SHA-256 digest of the key. Both halves are fixed
//! algorithms, so plans and selections reproduce across machines and
//! toolchains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// First eight bytes of the SHA-256 digest of `key`, read little-endian.
pub fn stable_hash64(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// The PRNG used for all seeded draws, keyed by a string and a user seed.
pub fn keyed_rng(key: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash64(key) ^ seed)
}

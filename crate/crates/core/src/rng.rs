//! Seeded random-number streams.
//!
//! All randomness in the crate flows from a single top-level `u64` seed
//! through *named sub-streams*: the seed selects the ChaCha key and the
//! stream name (hashed with FNV-1a) selects the ChaCha stream counter.
//! Two different names therefore yield statistically independent sequences
//! while remaining fully determined by `(seed, name)`. This lets every
//! experiment stage (data generation, model init, fold shuffling, ...) be
//! reproduced in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash, used to map stream names to ChaCha stream ids.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Returns the RNG for sub-stream `name` of `seed`.
pub fn named_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name.as_bytes()));
    rng
}

/// Derives an independent `u64` sub-seed for stage `name`, for components
/// that take a seed rather than an RNG.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    use rand::Rng;
    named_stream(seed, name).random()
}

/// Returns the RNG for the `index`-th member of the `name` family
/// (e.g. one stream per forest tree or per cross-validation fold).
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut bytes = Vec::with_capacity(name.len() + 8);
    bytes.extend_from_slice(name.as_bytes());
    bytes.extend_from_slice(&index.to_be_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(&bytes));
    rng
}

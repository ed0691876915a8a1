//! Deterministic seed derivation.
//!
//! Every stochastic site in the harness draws from a stream keyed by the
//! master seed plus a domain tag and indices. Streams are independent of
//! worker scheduling, so multi-worker runs reproduce single-worker output
//! byte for byte.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over an arbitrary byte string. Stable across platforms and
/// releases, unlike the std hasher.
fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives a child seed from a master seed, a domain tag, and indices.
pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, tag.as_bytes());
    for &ix in indices {
        h = fnv1a(h, &ix.to_le_bytes());
    }
    h
}

/// Derives a child seed keyed by a string id (e.g. a question id).
pub fn derive_seed_keyed(master: u64, tag: &str, key: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, tag.as_bytes());
    h = fnv1a(h, key.as_bytes());
    for &ix in indices {
        h = fnv1a(h, &ix.to_le_bytes());
    }
    h
}

/// Builds the RNG for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

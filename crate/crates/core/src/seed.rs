//! Seed derivation for independent, order-insensitive RNG streams.
//!
//! Every run, task, and experiment cell draws from its own stream whose seed
//! is a stable hash of the base seed plus string tags. Executing cells in a
//! different order (or in parallel) therefore cannot change any cell's result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the parts, with a separator byte between parts so that the
/// grouping of the input is part of the hash.
fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derives a stream seed from a base seed and a list of string tags.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let base_bytes = base.to_le_bytes();
    let mut parts: Vec<&[u8]> = Vec::with_capacity(tags.len() + 1);
    parts.push(&base_bytes);
    for tag in tags {
        parts.push(tag.as_bytes());
    }
    fnv1a(&parts)
}

/// Builds the stream RNG for a seed. ChaCha8 has a stable, portable stream,
/// so identical seeds give identical draws on every platform and build.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

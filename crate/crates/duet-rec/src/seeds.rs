//! Deterministic seed derivation.
//!
//! Every stochastic component draws from a [`rand_chacha::ChaCha8Rng`] seeded
//! through this module, so a run is fully reproducible from one `u64` seed.
//! Independent purposes get independent substreams by mixing a string tag
//! into the root seed; the tag is hashed with FNV-1a and the combination is
//! finalized with a SplitMix64 step so that nearby seeds do not produce
//! correlated streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a hash of a byte string, 64-bit variant.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer; bijective on `u64`.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive the seed for the substream identified by `tag`.
pub fn substream_seed(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ fnv1a64(tag.as_bytes()))
}

/// RNG for the substream identified by `tag`.
pub fn substream(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(root, tag))
}

/// RNG for the `n`-th member of a family of substreams (for example one per
/// epoch or one per entity).
pub fn substream_n(root: u64, tag: &str, n: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(substream_seed(root, tag) ^ n.wrapping_mul(0x9e3779b97f4a7c15)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fnv_matches_reference_vectors() {
        // Reference values for the 64-bit FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn substreams_are_stable_and_distinct() {
        let a1: u64 = substream(7, "alpha").random();
        let a2: u64 = substream(7, "alpha").random();
        let b: u64 = substream(7, "beta").random();
        let c: u64 = substream(8, "alpha").random();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert_ne!(a1, c);
    }

    #[test]
    fn indexed_substreams_differ_by_index() {
        let x: u64 = substream_n(7, "epoch", 0).random();
        let y: u64 = substream_n(7, "epoch", 1).random();
        assert_ne!(x, y);
        let x2: u64 = substream_n(7, "epoch", 0).random();
        assert_eq!(x, x2);
    }
}

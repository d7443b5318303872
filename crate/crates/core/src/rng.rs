//! Seed derivation and RNG construction.
//!
//! All randomness flows through explicitly seeded ChaCha8 streams. Distinct
//! uses (parent init, focus-set draws, ensemble runs, ...) get independent
//! seeds derived from a base seed and a stream index, so adding a consumer
//! never perturbs an existing one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer: a cheap, well-mixed u64 -> u64 bijection.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from `base` for stream `stream`.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(splitmix64(stream.wrapping_mul(0xA076_1D64_78BD_642F))))
}

/// Derive a seed two levels deep (e.g. run index, then episode index).
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_stream_sensitive() {
        assert_eq!(derive(1, 0), derive(1, 0));
        assert_ne!(derive(1, 0), derive(1, 1));
        assert_ne!(derive(1, 0), derive(2, 0));
        // consecutive streams must not collide for small bases
        let mut seen = std::collections::BTreeSet::new();
        for base in 0..8u64 {
            for stream in 0..64u64 {
                assert!(seen.insert(derive(base, stream)));
            }
        }
    }

    #[test]
    fn rng_streams_reproduce() {
        use rand::Rng;
        let mut a = rng_from_seed(42);
        let mut b = rng_from_seed(42);
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}

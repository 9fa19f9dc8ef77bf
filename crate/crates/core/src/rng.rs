//! Deterministic seeding. Every stochastic routine takes a `u64` seed and
//! builds its own ChaCha stream, so results do not depend on thread count or
//! call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; mixes a parent seed with a stream tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed from a textual label (e.g. a defense name) and a parent.
pub fn derive_str(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(derive(seed, 0xA5A5), |acc, b| derive(acc, b as u64))
}

//! Seeded random streams.
//!
//! Every stochastic step in the crate draws from a [`SeededRng`] built from a
//! 64-bit seed. Independent sub-streams are obtained with [`child_seed`], which
//! mixes a string label into the parent seed, so that e.g. the present-class
//! and absent-class draws of a split never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn child_seed(seed: u64, label: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a(label)))
}

pub fn child(seed: u64, label: &str) -> SeededRng {
    seeded(child_seed(seed, label))
}

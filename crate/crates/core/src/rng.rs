//! Seed derivation and stream construction.
//!
//! Every random stream in the crate is keyed by a tuple of integers (master seed,
//! cell, replication, component, ...). Keys are folded through a SplitMix64 finalizer so
//! that neighbouring keys produce unrelated generator states, and the resulting 64-bit
//! seed initializes a Xoshiro256++ generator.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// Component tags keep streams for different purposes apart.
pub mod component {
    pub const PATH: u64 = 0x5041_5448;
    pub const CANDIDATES: u64 = 0x4341_4e44;
    pub const IN_SAMPLE: u64 = 0x0049_5300;
    pub const WALK_FORWARD: u64 = 0x0057_4600;
    pub const PARAMETERS: u64 = 0x5041_5241;
    pub const OBSERVED: u64 = 0x4f42_5356;
    pub const WORKFLOW: u64 = 0x574b_464c;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into a single 64-bit seed.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x6a09_e667_f3bc_c909);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x3c6e_f372_fe94_f82b)));
    }
    h
}

pub fn stream(master: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, keys))
}

/// Stable 64-bit hash of a label, used to turn names into stream keys.
pub fn label_key(label: &str) -> u64 {
    // FNV-1a, then mixed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

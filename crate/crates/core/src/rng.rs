//! The single PRNG family used throughout the crate.
//!
//! Every stochastic step draws from a `Xoshiro256PlusPlus` seeded through
//! SplitMix64. Sub-streams (per image, per annotator) are derived by mixing
//! the parent seed with a stable hash of the stream key, so results never
//! depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for a named sub-stream of `seed`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    mix64(seed ^ mix64(stable_hash(key.as_bytes())))
}

/// Seed for an indexed sub-stream of `seed`.
pub fn derive_seed_indexed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

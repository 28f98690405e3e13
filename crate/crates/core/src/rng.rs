//! Seed derivation for reproducible parallel sampling.
//!
//! Every random draw in the crate flows from a single master seed through
//! `mix`, a SplitMix64 chain over context indices (grid cell, replica,
//! realization, role). Work items get independent, order-free seeds, so
//! results are bitwise identical for any rayon worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer. Standard constants from Steele, Lea & Flood (2014).
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of context indices into a seed, one SplitMix64 step per
/// index. `mix(s, &[a, b])` != `mix(s, &[b, a])` in general; order is part of
/// the contract.
pub fn mix(master: u64, context: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &c in context {
        s = splitmix64(s ^ c.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    }
    s
}

/// ChaCha8 stream seeded for one work item. The seed picks the key, the
/// stream index selects a disjoint keystream, so (seed, stream) pairs never
/// collide across realizations.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Role tags keep draws for different purposes out of each other's streams.
pub mod role {
    pub const PORTFOLIO: u64 = 1;
    pub const DIVERSITY: u64 = 2;
    pub const CAPACITY: u64 = 3;
    pub const DEMAND: u64 = 4;
    pub const THERMAL: u64 = 5;
}

//! Deterministic seed-stream derivation.
//!
//! Every source of randomness in the crate draws from a [`rand_chacha`]
//! stream whose seed is derived from a root seed plus a tag path, e.g.
//! `(root, TAG_LOCAL_TRAIN, client, round)`. Streams are therefore
//! independent of execution order and thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INIT: u64 = 0x01;
pub const TAG_LOCAL_TRAIN: u64 = 0x02;
pub const TAG_TEACHER: u64 = 0x03;
pub const TAG_MEMORY: u64 = 0x04;
pub const TAG_UNLEARN: u64 = 0x05;
pub const TAG_POISON: u64 = 0x06;
pub const TAG_PARTITION: u64 = 0x07;
pub const TAG_BLOBS: u64 = 0x08;
pub const TAG_FLIP: u64 = 0x09;
pub const TAG_TRIAL: u64 = 0x0a;
pub const TAG_OVERLAP: u64 = 0x0b;
pub const TAG_SWEEP: u64 = 0x0c;

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a tag path into a single 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3; // arbitrary nonzero start
    for &p in parts {
        state = splitmix(state ^ splitmix(p));
    }
    state
}

/// Seeded RNG for the given tag path.
pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

//! Named random streams derived from a single experiment seed.
//!
//! Every consumer of randomness (data synthesis, weight init, pivot
//! shuffling) asks for its own stream by name, so adding draws to one stage
//! never shifts the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA: &str = "data";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";

/// Derives the seed of stream `name` from the master `seed`.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the seed through splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

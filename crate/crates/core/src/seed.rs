//! Seed derivation.
//!
//! Every stream of randomness in a run is derived from an explicit seed by
//! mixing it with a stream label, so independent streams never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels for [`mix`]. Values are arbitrary but fixed forever.
pub mod stream {
    pub const TAKE: u64 = 0x7461_6b65;
    pub const LOSS: u64 = 0x6c6f_7373;
    pub const CRASH: u64 = 0x6372_6173;
    pub const TASK: u64 = 0x7461_736b;
    pub const DATA: u64 = 0x6461_7461;
    pub const WORKERS: u64 = 0x776f_726b;
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive combination of two seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17))
}

pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix(mix(a, b), c)
}

/// Seed of task `task_id` under `run_seed`. Independent of which worker runs it.
pub fn task_seed(run_seed: u64, task_id: u64) -> u64 {
    mix3(run_seed, stream::TASK, task_id)
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream))
}

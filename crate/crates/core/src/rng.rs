//! Seed-deterministic random streams.
//!
//! Every random quantity is drawn from its own ChaCha stream keyed by
//! `(seed, purpose, index)`, so a node's samples do not depend on the order
//! in which nodes or experiment cells are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    LoadP = 1,
    LoadQ = 2,
    SlackVoltage = 3,
    NoiseMagnitude = 4,
    NoiseAngle = 5,
    NoiseP = 6,
    NoiseQ = 7,
    Split = 8,
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent child seed for sub-experiment `index`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn stream(seed: u64, purpose: Purpose, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(purpose as u64)));
    rng.set_stream(index as u64);
    rng
}

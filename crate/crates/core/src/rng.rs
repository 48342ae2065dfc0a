//! Counter-based RNG stream derivation.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by
//! `(master_seed, purpose, run, agent, index)`, so results do not depend on
//! the order in which agents or runs are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    GroundTruth = 1,
    DecisionSet = 2,
    Reward = 3,
    TreeNoise = 4,
    Topology = 5,
    RunSeed = 6,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 256-bit ChaCha key from the stream coordinates.
pub fn stream(master_seed: u64, purpose: Purpose, run: u64, agent: u64, index: u64) -> StreamRng {
    let mut h = mix(master_seed);
    let mut seed = [0u8; 32];
    for (slot, word) in [purpose as u64, run, agent, index].into_iter().enumerate() {
        h = mix(h ^ word.wrapping_mul(0xd6e8_feb8_6659_fd93).wrapping_add(slot as u64));
        seed[slot * 8..(slot + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Per-run seed for repeat `run` of an experiment.
pub fn run_seed(master_seed: u64, run: u64) -> u64 {
    mix(mix(master_seed ^ (Purpose::RunSeed as u64)).wrapping_add(run))
}

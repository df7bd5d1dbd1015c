//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own PCG32 stream (64-bit state,
//! stream selected through the increment) derived from the run seed, so that
//! e.g. changing the dropout configuration never perturbs sampling order.

use rand::SeedableRng;
use rand_pcg::Pcg32;

/// Name written into model-file headers.
pub const PRNG_NAME: &str = "pcg32";

pub type Rng = Pcg32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Dropout = 3,
    Split = 4,
    Synthetic = 5,
    Gradcheck = 6,
}

/// PCG32 generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    // Scramble the seed so nearby seeds start far apart.
    let state = splitmix64(seed);
    Pcg32::new(state, stream as u64)
}

/// Arbitrary-index variant of [`stream`], for callers that need more streams.
pub fn indexed_stream(seed: u64, index: u64) -> Rng {
    Pcg32::new(splitmix64(seed), index)
}

pub fn from_u64(seed: u64) -> Rng {
    Pcg32::seed_from_u64(seed)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

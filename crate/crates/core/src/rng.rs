//! Seed derivation.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` whose seed is
//! derived from a user seed plus a (stream, index) pair with SplitMix64
//! finalisation. ChaCha8 output is specified independently of the host, so
//! maps, datasets and suites regenerate bit-identically across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Streams keep independent consumers of one user seed from colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Map = 1,
    Destination = 2,
    Start = 3,
    Current = 4,
    Suite = 5,
    Weights = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream as u64) ^ index)
}

pub fn rng_for(seed: u64, stream: Stream, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

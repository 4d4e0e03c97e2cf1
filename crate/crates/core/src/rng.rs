//! Seeded random streams.
//!
//! All randomness comes from ChaCha8, a counter-based generator: one 64-bit
//! seed plus a stream number selects an independent sequence, so each purpose
//! (initialization, training data, probes, evaluation data) gets its own stream
//! and adding draws to one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_PROBES: u64 = 3;
pub const STREAM_EVAL: u64 = 4;
pub const STREAM_GRAPH: u64 = 5;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an unrelated child seed, e.g. one per trial or per layer.
pub fn split(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

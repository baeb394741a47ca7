//! Seed-derived random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by the master seed
//! and a short tag path (stage, receiver id, round, sample index). Streams are
//! independent of the order in which workers request them, so any parallel
//! schedule reproduces the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stage tags used as the first element of a stream path.
pub mod tag {
    pub const SCENARIO: u64 = 0x5343_454e;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const INIT: u64 = 0x494e_4954;
    pub const LOCAL: u64 = 0x4c4f_4341;
    pub const FEDAVG: u64 = 0x4645_4441;
    pub const MAPPING: u64 = 0x4d41_5050;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a master seed and a tag path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Open the stream identified by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

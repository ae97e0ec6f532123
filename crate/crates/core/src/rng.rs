//! Seeded random streams.
//!
//! Every randomized routine takes a master seed and derives an independent
//! stream per unit of work (replicate, repetition, parameter set) by mixing
//! the seed with a path of integer tags. Derivation uses the SplitMix64
//! finalizer applied along the path, so a stream depends only on
//! `(seed, tags)` and never on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation and resampling streams.
pub type StreamRng = ChaCha8Rng;

/// Stream purposes, used as the first tag when deriving seeds.
pub mod tag {
    pub const BOOT_RESAMPLE: u64 = 1;
    pub const BOOT_FIT: u64 = 2;
    pub const CV_SPLIT: u64 = 3;
    pub const CV_FIT: u64 = 4;
    pub const PREDICT: u64 = 5;
    pub const SIMULATE: u64 = 6;
    pub const FOLLOWUP: u64 = 7;
    pub const SEARCH: u64 = 8;
    pub const SEGMENTED: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of tags into a child seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Generator for the stream identified by `(master, tags)`.
pub fn stream(master: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, tags))
}

//! Seed derivation.
//!
//! Every random choice in the pipeline is driven by one user seed. Stages
//! derive child seeds by mixing the parent seed with a stage tag and an index
//! through a SplitMix64 finalizer, so that e.g. restart 3 of the fit at scale
//! 35 always sees the same stream regardless of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_SPLIT: u64 = 0x5350_4c49;
pub const TAG_RESTART: u64 = 0x5245_5354;
pub const TAG_INIT_SCALE: u64 = 0x494e_4954;
pub const TAG_OPNMF: u64 = 0x4f50_4e4d;
pub const TAG_SIMULATE: u64 = 0x5349_4d55;
pub const TAG_RANDOM_SPLIT: u64 = 0x5250_4c54;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(parent, tag, index)`.
pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(tag)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! whose seed is a hash of the run seed and a few integer tags, so any
//! sub-stream can be recreated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with `tags` into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived(base: u64, tags: &[u64]) -> SeededRng {
    seeded(derive_seed(base, tags))
}

/// Domain tags keeping independent streams apart.
pub(crate) mod stream {
    pub const INIT_TABLES: u64 = 1;
    pub const INIT_PROJECTION: u64 = 2;
    pub const INIT_FUSION: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const TRIPLE_CAP: u64 = 5;
    pub const NEGATIVES: u64 = 6;
}

//! Deterministic sub-seeding. Every random stream in a run is derived from
//! the master seed plus a tag path, so changing one experiment knob never
//! shifts the randomness consumed elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const TAG_OVERSAMPLE: u64 = 0x6f76_6572;
pub const TAG_SELECT: u64 = 0x7365_6c65;
pub const TAG_DISTILL_SUBSET: u64 = 0x6469_7374;
pub const TAG_CLIENT: u64 = 0x636c_6965;
pub const TAG_SERVER_TRAIN: u64 = 0x7372_7672;
pub const TAG_CENTRAL: u64 = 0x6365_6e74;
pub const TAG_REPEAT: u64 = 0x7265_7074;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `tags` into `seed`. Order-sensitive: `derive(s, &[a, b]) != derive(s, &[b, a])`.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng_for(seed: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(seed, tags))
}

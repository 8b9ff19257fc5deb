//! Keyed random streams. Every stochastic draw in a run comes from a stream
//! derived from the run seed and a tuple of integer tags, so results do not
//! depend on call order across drones or threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |h, &t| splitmix(h ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

/// Stream purposes.
pub mod tag {
    pub const TRAJECTORY: u64 = 1;
    pub const BIAS: u64 = 2;
    pub const IMU: u64 = 3;
    pub const SCAN: u64 = 4;
    pub const CHANNEL: u64 = 5;
    pub const LAYOUT: u64 = 6;
}

//! Derived seeds for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `base`. Distinct
/// `(stream, index)` pairs give statistically independent generators.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(base) ^ stream) ^ index)
}

pub fn rng_for(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}

/// Stream identifiers used across the crate.
pub mod streams {
    pub const TRAIN_SCENES: u64 = 1;
    pub const TEST_SCENES: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const AUGMENT: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..8 {
            for i in 0..256 {
                assert!(seen.insert(derive_seed(42, s, i)));
            }
        }
    }
}

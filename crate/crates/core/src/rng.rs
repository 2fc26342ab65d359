//! Seed plumbing. Every random draw in the engine comes from a seeded
//! ChaCha8 stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed for `(stream, index)` from a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ splitmix(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))
        ^ splitmix(index.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(1));
    z = splitmix(z);
    z
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

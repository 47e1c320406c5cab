//! Seeded random streams. Every consumer derives its own stream from a
//! master seed and a stream label so results never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CadRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix(mix(master) ^ stream.rotate_left(17))
}

pub fn rng_from_seed(seed: u64) -> CadRng {
    ChaCha8Rng::seed_from_u64(seed)
}

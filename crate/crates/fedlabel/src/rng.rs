//! Deterministic seed derivation.
//!
//! Every stochastic step in the simulator (init, shuffles, data draws) gets
//! its own seed derived from the experiment seed and a structural path such
//! as `(user, iteration, phase)`. No RNG state is ever shared between
//! clients, so results do not depend on scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with a structural path into a new seed.
pub fn mix_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in path {
        s = splitmix64(s ^ splitmix64(p));
    }
    s
}

/// Portable deterministic RNG for a derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

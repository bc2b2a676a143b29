//! Seeded randomness.
//!
//! Every random decision in the crate (shuffles, bootstrap draws, feature
//! subsampling, weight initialisation, dropout masks) draws from
//! [`SeededRng`], which is xoshiro256++ initialised from a `u64` through
//! SplitMix64 (the `seed_from_u64` expansion of `rand_xoshiro`). Independent
//! sub-streams, such as one per tree of a forest, get their own seed from
//! [`derive_seed`], so the stream a component sees does not depend on how many
//! numbers other components consumed or in which order they ran.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// SplitMix64 finaliser applied to `seed ^ stream·φ`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Seeded random streams.
//!
//! Every stochastic component draws from a named sub-stream of one run
//! seed, so a run is reproducible from a single integer.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

/// FNV-1a, used only to turn a stream name into a 64-bit salt.
fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for sub-stream `name` of `seed`. Xoshiro state is expanded
/// from the mixed 64-bit value with SplitMix64.
pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(seed ^ fnv1a(name).rotate_left(17))
}

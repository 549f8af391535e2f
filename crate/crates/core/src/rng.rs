//! Seeded random streams.
//!
//! Every stochastic routine takes a `u64` seed. Independent pieces of work
//! (a record, a bootstrap replicate, a Monte Carlo replication) get their own
//! ChaCha8 stream selected with [`stream`], so the output does not depend on
//! how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// The generator for stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, used when a replication itself needs per-record
/// streams. SplitMix64 finalizer over `seed ^ golden * (index + 1)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

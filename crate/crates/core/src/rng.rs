//! Reproducible random streams.
//!
//! Population draws are keyed by `(seed, unit, slot)` so a realization does
//! not depend on generation order. Replications use one ChaCha stream per
//! replication index under a shared base seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn key(seed: u64, unit: u64, slot: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ unit) ^ slot.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// A standard normal variate determined entirely by `(seed, unit, slot)`.
pub fn keyed_normal(seed: u64, unit: usize, slot: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(key(seed, unit as u64, slot as u64));
    rng.sample(StandardNormal)
}

/// The random stream for replication `replication` of a study.
pub fn replication_rng(base_seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replication as u64);
    rng
}

//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded with
//! a 64-bit seed (expanded by `rand_core`'s `seed_from_u64`) and a 64-bit
//! stream id. Bounded integers use the multiply-shift map
//! `(next_u64 * n) >> 64`, unit floats use `(next_u64 >> 11) * 2^-53`.
//! These three rules are all a reimplementation needs to reproduce a forest.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for a given `(seed, stream)` pair.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform integer in `0..n`. `n` must be non-zero.
#[inline]
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Uniform float in `[0, 1)`.
#[inline]
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 finaliser, used to derive independent seeds for jobs.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for job `job` of a run seeded with `seed`; independent of execution order.
pub fn job_seed(seed: u64, job: u64) -> u64 {
    mix(seed ^ mix(job))
}

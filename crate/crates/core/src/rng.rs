//! The single random stream type used by sampling and dynamics.
//!
//! Algorithm, so runs can be reproduced elsewhere:
//! ChaCha with 8 rounds, keyed by `rand_core`'s `seed_from_u64` (PCG32
//! expansion of the 64-bit seed into a 32-byte key), on an explicit 64-bit
//! stream id. A unit draw takes the top 53 bits of one `next_u64` and
//! scales by 2^-53. Integer and shuffle draws are derived from unit draws.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids. Population sampling and dynamics draw from separate streams
/// of the same seed so that changing one never perturbs the other.
pub const POPULATION_STREAM: u64 = 0;
pub const DYNAMICS_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub struct SimRng(ChaCha8Rng);

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SimRng(inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi as i128 - lo as i128 + 1) as f64;
        let k = (self.unit() * span).floor() as i128;
        (lo as i128 + k).min(hi as i128) as i64
    }

    /// Fisher-Yates, drawing from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.int_inclusive(0, i as i64) as usize;
            items.swap(i, j);
        }
    }
}

//! Seeded counter-based pseudo-randomness.
//!
//! The generator is splitmix64 driven by an explicit draw counter: draw `n`
//! is a pure integer function of `(seed, n)`, so equal seeds give equal
//! sequences on every platform. Callers own their `Rng` and thread it
//! explicitly through every stochastic operation.

use crate::error::{Error, Result};
use crate::tensor::{Shape3, Volume};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream indices for deriving the independent generators of a run from
/// its single seed.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { seed, counter: 0 }
    }

    /// Derive an independent stream seed from a base seed and a stream label.
    /// Used to split one top-level seed into per-purpose seeds.
    pub fn derive(seed: u64, stream: u64) -> u64 {
        mix(seed ^ mix(stream.wrapping_mul(GAMMA).wrapping_add(GAMMA)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[-bound, bound)`.
    #[inline]
    pub fn uniform(&mut self, bound: f64) -> f64 {
        -bound + 2.0 * bound * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Volume with every element drawn i.i.d. uniform in `[-bound, bound)`,
/// consumed from `rng` in canonical element order.
pub fn uniform_init(shape: Shape3, bound: f64, rng: &mut Rng) -> Result<Volume> {
    if !(bound > 0.0) {
        return Err(Error::config(format!(
            "uniform_init bound must be > 0, got {}",
            bound
        )));
    }
    let data = (0..shape.len()).map(|_| rng.uniform(bound)).collect();
    Volume::from_vec(shape, data)
}

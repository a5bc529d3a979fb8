//! Seedable counter-based randomness. Every stochastic routine takes the generator
//! explicitly.

use rand_chacha::rand_core::{RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Uniform draw from `[0, 1)` with 53 bits of precision.
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `0..n`.
pub fn below(rng: &mut Rng, n: usize) -> usize {
    assert!(n > 0, "empty range");
    ((uniform(rng) * n as f64) as usize).min(n - 1)
}

pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Draws an index from an (unnormalized, non-negative) weight vector.
pub fn sample_categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let target = uniform(rng) * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// Uniform draw from `[-bound, bound)`.
pub fn symmetric(rng: &mut Rng, bound: f64) -> f64 {
    (uniform(rng) * 2.0 - 1.0) * bound
}

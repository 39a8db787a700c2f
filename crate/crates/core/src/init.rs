//! Seeded parameter initialization.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix drawn from uniform(-a, a) with `a = 1/√fan_in`.
pub fn uniform_matrix<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> DMatrix<f64> {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    // column-major fill order is part of the seed contract
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

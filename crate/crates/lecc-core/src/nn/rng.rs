//! Seeded randomness. Every stochastic step in the crate derives its stream
//! from a user-supplied base seed plus a purpose tag, so independent stages
//! (init, sampling, shuffling) never share or race a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::Matrix;
use super::scalar::Scalar;

/// Mixes a purpose tag into a base seed (FNV-1a over the tag bytes).
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base.rotate_left(17);
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with entries drawn from N(0, std^2). Draws happen in f64 in
/// row-major order, so f32 and f64 models share the same underlying values.
pub fn normal_matrix<F: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix<F> {
    let dist = Normal::new(0.0, std).expect("std must be positive");
    let data: Vec<F> = (0..rows * cols)
        .map(|_| F::from_f64_lit(dist.sample(rng)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("size matches by construction")
}

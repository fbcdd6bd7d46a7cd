//! Seeded randomness. All stochastic components draw from ChaCha8 streams
//! derived from a run seed, so results are identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Matrix, Real};

pub type Rng64 = ChaCha8Rng;

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: u64, index: u64) -> Rng64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    r
}

/// Normal(0, std) resampled until within two standard deviations.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

pub fn truncated_normal_matrix<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(truncated_normal(rng, std)))
}

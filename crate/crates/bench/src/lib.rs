//! Shared fixtures for the criterion benchmarks.

use bae_core::rng;
use bae_core::studies::{Experiment, StudyConfig};
use bae_core::{DMatrix, DVector};

pub fn example1() -> Experiment {
    Experiment::build(StudyConfig::example1()).expect("example 1 builds")
}

pub fn example2() -> Experiment {
    Experiment::build(StudyConfig::example2()).expect("example 2 builds")
}

/// Well-conditioned random SPD matrix.
pub fn spd(seed: u64, n: usize) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 0);
    let b = DMatrix::from_iterator(n, n, rng::standard_normal(&mut r, n * n).iter().copied());
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

pub fn direction(seed: u64, n: usize) -> DVector<f64> {
    rng::standard_normal(&mut rng::stream(seed, 1), n)
}

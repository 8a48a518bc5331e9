#![allow(dead_code)]

use bae_core::linalg::csr_from_triplets;
use bae_core::prior::{GaussianBlock, GaussianPrior, PrecisionForm};
use bae_core::{DMatrix, DVector};

/// Tridiagonal operator with identity mass.
pub fn small_prior(d: usize) -> GaussianPrior {
    small_prior_with(d, PrecisionForm::L2)
}

pub fn small_prior_with(d: usize, form: PrecisionForm) -> GaussianPrior {
    let mut t = Vec::new();
    for i in 0..d {
        t.push((i, i, 2.5));
        if i + 1 < d {
            t.push((i, i + 1, -0.7));
            t.push((i + 1, i, -0.7));
        }
    }
    let a = csr_from_triplets(d, d, &t);
    let m = csr_from_triplets(d, d, &(0..d).map(|i| (i, i, 1.0)).collect::<Vec<_>>());
    let mean = DVector::from_fn(d, |i, _| 0.3 * i as f64 - 0.2);
    GaussianPrior::single(GaussianBlock::from_matrices(mean, a, m, form).unwrap())
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn quadratic_slices() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, -0.5, 0.3, 0.0, 0.3, 2.0]),
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 1.0, 0.0, 0.0, 0.5, 0.0, 1.0]),
    ]
}

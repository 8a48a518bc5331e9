use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;

use crate::error::{check_dim, Error, Result};
use crate::inversion::LaplacePosterior;
use crate::linalg::{csr_mul_vec, sym_eigen, sym_eigenvalues, symmetrize};

fn m_norm_sq(x: &DVector<f64>, mass: &CsrMatrix<f64>) -> f64 {
    x.dot(&csr_mul_vec(mass, x))
}

/// `sqrt(x^T M x)`.
pub fn m_norm(x: &DVector<f64>, mass: &CsrMatrix<f64>) -> f64 {
    m_norm_sq(x, mass).max(0.0).sqrt()
}

/// Reference posterior with its covariance square root, for repeated
/// Wasserstein evaluations against the same reference.
pub struct W2Reference {
    pub map: DVector<f64>,
    sqrt: DMatrix<f64>,
    trace: f64,
}

fn spd_check(c: &DMatrix<f64>, values: &[f64]) -> Result<()> {
    let top = values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !c.iter().all(|v| v.is_finite()) || min < -1e-9 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

impl W2Reference {
    pub fn new(post: &LaplacePosterior) -> Result<Self> {
        Self::from_parts(&post.map, &post.covariance)
    }

    pub fn from_parts(map: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        check_dim("reference covariance", cov.nrows(), map.len())?;
        let e = sym_eigen(&symmetrize(cov))?;
        spd_check(cov, e.values.as_slice())?;
        let mut v = e.vectors.clone();
        for (j, &lam) in e.values.iter().enumerate() {
            v.column_mut(j).scale_mut(lam.max(0.0).sqrt());
        }
        let sqrt = symmetrize(&(&v * e.vectors.transpose()));
        Ok(Self { map: map.clone(), sqrt, trace: cov.trace() })
    }

    /// Squared 2-Wasserstein distance from `N(map, cov)` to the reference;
    /// the mean term is measured in the mass norm.
    pub fn distance_sq(&self, map: &DVector<f64>, cov: &DMatrix<f64>, mass: &CsrMatrix<f64>) -> Result<f64> {
        check_dim("posterior mean", map.len(), self.map.len())?;
        check_dim("posterior covariance", cov.nrows(), self.map.len())?;
        check_dim("mass matrix", mass.nrows(), self.map.len())?;
        let inner = symmetrize(&(&self.sqrt * cov * &self.sqrt));
        let values = sym_eigenvalues(&inner)?;
        spd_check(cov, &values)?;
        let cross: f64 = values.iter().map(|&v| v.max(0.0).sqrt()).sum();
        let d = m_norm_sq(&(map - &self.map), mass) + cov.trace() + self.trace - 2.0 * cross;
        if d < -1e-9 * (cov.trace() + self.trace).max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(d.max(0.0))
    }
}

/// Squared 2-Wasserstein distance between two Gaussian posteriors, with
/// `b` playing the role of the reference.
pub fn wasserstein2_sq(a: &LaplacePosterior, b: &LaplacePosterior, mass: &CsrMatrix<f64>) -> Result<f64> {
    W2Reference::new(b)?.distance_sq(&a.map, &a.covariance, mass)
}

/// `(l2, linf)` norms of `a - b`.
pub fn vector_errors(a: &DVector<f64>, b: &DVector<f64>) -> (f64, f64) {
    let d = a - b;
    (d.norm(), d.amax())
}

pub fn frobenius_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Linear-interpolated quantile of unsorted data; `NaN` when empty.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

pub fn mean(data: &[f64]) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    data.iter().sum::<f64>() / data.len() as f64
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("slope needs two or more matching points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-log slope needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

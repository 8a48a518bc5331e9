//! Generalized eigenanalysis of the error covariance against the noise
//! covariance, the low-rank inverse of the total-error covariance, and a
//! monitor for the convergence of the spectrum with the sample size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_lower, sym_eigen, symmetrize};

/// Default threshold on generalized eigenvalues.
pub const DEFAULT_THRESHOLD: f64 = 0.1;
/// Default relative tolerance of the spectrum monitor.
pub const DEFAULT_MONITOR_TOL: f64 = 0.05;

/// Solutions of `C v = lambda N v`, descending, with `V^T N V = I`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

fn lower_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

fn upper_t_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
}

fn noise_factor(noise: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !noise.is_square() {
        return Err(Error::Dimension(format!("noise covariance is {}x{}", noise.nrows(), noise.ncols())));
    }
    cholesky_lower(&symmetrize(noise))
        .map_err(|_| Error::InvalidArgument("noise covariance must be symmetric positive definite".into()))
}

fn eig_with_factor(cov: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let whitened = lower_solve(l, &lower_solve(l, cov).transpose());
    let e = sym_eigen(&symmetrize(&whitened))?;
    Ok(GeneralizedEigen { values: e.values, vectors: upper_t_solve(l, &e.vectors) })
}

/// Generalized symmetric-definite eigenproblem `cov v = lambda noise v`.
pub fn generalized_eig(cov: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    check_dim("error covariance", cov.nrows(), noise.nrows())?;
    let l = noise_factor(noise)?;
    eig_with_factor(cov, &l)
}

/// How many generalized eigenpairs to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankRule {
    /// Keep eigenvalues above the threshold.
    Threshold(f64),
    Fixed(usize),
    Full,
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Threshold(DEFAULT_THRESHOLD)
    }
}

/// `(N + C)^{-1} ~ N^{-1} - V_r D_r V_r^T` with `D = lambda / (1 + lambda)`.
/// Negative eigenvalues are treated as zero.
#[derive(Debug, Clone)]
pub struct LowRankNoiseInverse {
    noise_chol: DMatrix<f64>,
    /// All generalized eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    /// Retained eigenvectors.
    pub vectors: DMatrix<f64>,
    pub ratios: DVector<f64>,
    /// Sum of the discarded ratios.
    pub truncation_bound: f64,
}

fn ratio(l: f64) -> f64 {
    let l = l.max(0.0);
    l / (1.0 + l)
}

impl LowRankNoiseInverse {
    pub fn new(cov: &DMatrix<f64>, noise: &DMatrix<f64>, rule: RankRule) -> Result<Self> {
        check_dim("error covariance", cov.nrows(), noise.nrows())?;
        let l = noise_factor(noise)?;
        let e = eig_with_factor(cov, &l)?;
        let p = e.values.len();
        let r = match rule {
            RankRule::Threshold(t) => e.values.iter().take_while(|&&v| v > t).count(),
            RankRule::Fixed(r) => r.min(p),
            RankRule::Full => p,
        };
        let ratios = DVector::from_fn(r, |i, _| ratio(e.values[i]));
        let truncation_bound = e.values.iter().skip(r).map(|&v| ratio(v)).sum();
        Ok(Self { noise_chol: l, vectors: e.vectors.columns(0, r).into_owned(), eigenvalues: e.values, ratios, truncation_bound })
    }

    pub fn rank(&self) -> usize {
        self.ratios.len()
    }

    pub fn dim(&self) -> usize {
        self.noise_chol.nrows()
    }

    fn noise_solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        upper_t_solve(&self.noise_chol, &lower_solve(&self.noise_chol, x))
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let base = self.noise_solve(&xm).column(0).into_owned();
        let mut c = self.vectors.tr_mul(x);
        c.component_mul_assign(&self.ratios);
        base - &self.vectors * c
    }

    /// The approximate inverse as a dense matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut vd = self.vectors.clone();
        for (j, d) in self.ratios.iter().enumerate() {
            vd.column_mut(j).scale_mut(*d);
        }
        let ninv = self.noise_solve(&DMatrix::identity(self.dim(), self.dim()));
        symmetrize(&(ninv - vd * self.vectors.transpose()))
    }
}

/// One entry of a spectrum sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub n: usize,
    /// Generalized eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub entries: Vec<SpectrumEntry>,
    /// Relative change of the leading eigenvalues between consecutive entries.
    pub changes: Vec<f64>,
    pub threshold: f64,
    pub tolerance: f64,
    pub stabilized: bool,
    /// Smallest sample size from which every later change is below tolerance.
    pub stabilized_from: Option<usize>,
}

/// Largest relative change among the eigenvalues above `threshold` in
/// either spectrum.
pub fn leading_change(a: &[f64], b: &[f64], threshold: f64) -> f64 {
    let lead = |v: &[f64]| v.iter().take_while(|&&x| x > threshold).count();
    let k = lead(a).max(lead(b));
    (0..k)
        .map(|i| {
            let (x, y) = (a.get(i).copied().unwrap_or(0.0), b.get(i).copied().unwrap_or(0.0));
            (x - y).abs() / x.abs().max(y.abs())
        })
        .fold(0.0, f64::max)
}

/// Tracks the leading generalized eigenvalues over increasing sample sizes.
pub fn spectrum_monitor(entries: Vec<SpectrumEntry>, threshold: f64, tolerance: f64) -> Result<SpectrumReport> {
    if entries.len() < 2 {
        return Err(Error::InvalidArgument("spectrum monitor needs at least two entries".into()));
    }
    let changes: Vec<f64> =
        entries.windows(2).map(|w| leading_change(&w[0].eigenvalues, &w[1].eigenvalues, threshold)).collect();
    let stabilized = *changes.last().expect("two entries give one change") < tolerance;
    let first_stable = changes.iter().rposition(|&c| c >= tolerance).map_or(0, |i| i + 1);
    let stabilized_from = stabilized.then(|| entries[first_stable].n);
    Ok(SpectrumReport { entries, changes, threshold, tolerance, stabilized, stabilized_from })
}

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Eigenpairs of a symmetric matrix (lower triangle is read).
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen> {
    let n = a.nrows();
    let e = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::InvalidArgument("eigendecomposition did not converge".into()))?;
    let (s, u) = (e.S(), e.U());
    // faer returns ascending order
    let values = DVector::from_fn(n, |i, _| s[n - 1 - i]);
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut v = to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::InvalidArgument("eigenvalues did not converge".into()))?;
    v.reverse();
    Ok(v)
}

/// Lower Cholesky factor `L` with `a = L L^T`.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n < 200 {
        return a
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite);
    }
    let llt = to_faer(a).llt(Side::Lower).map_err(|_| Error::NotPositiveDefinite)?;
    let l = llt.L();
    Ok(DMatrix::from_fn(n, n, |i, j| if j <= i { l[(i, j)] } else { 0.0 }))
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = a.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(symmetrize(&c.inverse()))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semidefinite matrix;
/// negative eigenvalues from roundoff are floored at zero.
pub fn mat_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = sym_eigen(a)?;
    let mut v = e.vectors.clone();
    for (j, &lam) in e.values.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    Ok(symmetrize(&(&v * e.vectors.transpose())))
}

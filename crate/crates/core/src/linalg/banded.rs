use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::BandOrdering;
use crate::error::{Error, Result};

/// Square band matrix in the permuted numbering of a [`BandOrdering`].
///
/// Rows are stored contiguously with room for the `kl` extra super-diagonals
/// that partial pivoting can create, so the storage can be factored in place.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` at (i, j) in permuted numbering. Panics outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum();
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Assembles entries given in the original numbering into a band matrix in
/// the permuted numbering.
pub struct BandBuilder {
    ordering: Arc<BandOrdering>,
    matrix: BandMatrix,
}

impl BandBuilder {
    pub fn new(ordering: &Arc<BandOrdering>) -> Self {
        let bw = ordering.bandwidth;
        Self { ordering: ordering.clone(), matrix: BandMatrix::zeros(ordering.len(), bw, bw) }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = &self.ordering.perm;
        self.matrix.add(p[i], p[j], v);
    }

    /// Replaces row and column `i` by the identity (Dirichlet elimination).
    pub fn set_identity_row_col(&mut self, i: usize) {
        let pi = self.ordering.perm[i];
        let bw = self.ordering.bandwidth;
        let n = self.matrix.n;
        let lo = pi.saturating_sub(bw);
        let hi = (pi + bw).min(n - 1);
        for j in lo..=hi {
            self.matrix.set(pi, j, 0.0);
            self.matrix.set(j, pi, 0.0);
        }
        self.matrix.set(pi, pi, 1.0);
    }

    pub fn finish(self) -> BandMatrix {
        self.matrix
    }

    pub fn factor_lu(self) -> Result<BandLu> {
        BandLu::factor(self.matrix, &self.ordering)
    }

    pub fn factor_cholesky(self) -> Result<BandCholesky> {
        BandCholesky::factor(&self.matrix, &self.ordering)
    }
}

/// LU factorisation with partial pivoting of a band matrix, in the style of
/// LAPACK `gbtrf`. Solves take and return vectors in the original numbering.
#[derive(Debug, Clone)]
pub struct BandLu {
    ordering: Arc<BandOrdering>,
    lu: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn factor(mut a: BandMatrix, ordering: &Arc<BandOrdering>) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = (a.kl, a.ku);
        let umax = kl + ku;
        let mut piv = vec![0; n];
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = a.data[a.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * 1e-3 || best == 0.0 {
                return Err(Error::Singular { pivot: k });
            }
            piv[k] = p;
            let last_col = (k + umax).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (ik, ip) = (a.idx(k, j), a.idx(p, j));
                    a.data.swap(ik, ip);
                }
            }
            let d = a.data[a.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = a.idx(i, k);
                let l = a.data[ik] / d;
                a.data[ik] = l;
                if l != 0.0 {
                    let ri = a.idx(i, k + 1);
                    let rk = a.idx(k, k + 1);
                    let len = last_col - k;
                    for t in 0..len {
                        a.data[ri + t] -= l * a.data[rk + t];
                    }
                }
            }
        }
        Ok(Self { ordering: ordering.clone(), lu: a, piv })
    }

    pub fn n(&self) -> usize {
        self.lu.n
    }

    fn solve_permuted(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        let umax = a.kl + a.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + a.kl).min(n - 1) {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            let row = a.idx(k, k);
            for j in k + 1..=(k + umax).min(n - 1) {
                s -= a.data[row + (j - k)] * b[j];
            }
            b[k] = s / a.data[row];
        }
    }

    fn solve_transpose_permuted(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        let umax = a.kl + a.ku;
        // U^T y = b
        for k in 0..n {
            let row = a.idx(k, k);
            let yk = b[k] / a.data[row];
            b[k] = yk;
            if yk != 0.0 {
                for j in k + 1..=(k + umax).min(n - 1) {
                    b[j] -= a.data[row + (j - k)] * yk;
                }
            }
        }
        // L^T and the row swaps, in reverse
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + a.kl).min(n - 1) {
                s -= a.data[a.idx(i, k)] * b[i];
            }
            b[k] = s;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let perm = &self.ordering.perm;
        let mut w = vec![0.0; b.len()];
        for (i, &v) in b.iter().enumerate() {
            w[perm[i]] = v;
        }
        self.solve_permuted(&mut w);
        DVector::from_fn(b.len(), |i, _| w[perm[i]])
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let perm = &self.ordering.perm;
        let mut w = vec![0.0; b.len()];
        for (i, &v) in b.iter().enumerate() {
            w[perm[i]] = v;
        }
        self.solve_transpose_permuted(&mut w);
        DVector::from_fn(b.len(), |i, _| w[perm[i]])
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            out.set_column(j, &self.solve(&b.column(j).into_owned()));
        }
        out
    }
}

/// Cholesky factor `P A P^T = L L^T` of a symmetric positive definite band
/// matrix stored in permuted numbering.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    ordering: Arc<BandOrdering>,
    bw: usize,
    /// row-major lower band, entry (i, j) at i*(bw+1) + (j + bw - i)
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &BandMatrix, ordering: &Arc<BandOrdering>) -> Result<Self> {
        let n = a.n;
        let bw = a.kl;
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = a.get(j, j);
            for k in lo..j {
                d -= l[at(j, k)] * l[at(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let djj = d.sqrt();
            l[at(j, j)] = djj;
            for i in j + 1..=(j + bw).min(n - 1) {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = a.get(i, j);
                for k in lo_i..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                l[at(i, j)] = s / djj;
            }
        }
        Ok(Self { ordering: ordering.clone(), bw, l })
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    fn to_perm(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut w = vec![0.0; x.len()];
        for (i, &v) in x.iter().enumerate() {
            w[self.ordering.perm[i]] = v;
        }
        w
    }

    fn from_perm(&self, w: &[f64]) -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| w[self.ordering.perm[i]])
    }

    /// `y = F x` for the factor `F = P^T L` of `A = F F^T`.
    pub fn mul_factor(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut y = vec![0.0; n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.bw);
            *yi = (lo..=i).map(|j| self.l[self.at(i, j)] * x[j]).sum();
        }
        self.from_perm(&y)
    }

    /// `y = F^{-T} x`, so that `F^{-T} xi` has covariance `A^{-1}`.
    pub fn solve_factor_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut b: Vec<f64> = x.iter().copied().collect();
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + self.bw).min(n - 1) {
                s -= self.l[self.at(i, k)] * b[i];
            }
            b[k] = s / self.l[self.at(k, k)];
        }
        self.from_perm(&b)
    }

    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut b = self.to_perm(x);
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let mut s = b[i];
            for j in lo..i {
                s -= self.l[self.at(i, j)] * b[j];
            }
            b[i] = s / self.l[self.at(i, i)];
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + self.bw).min(n - 1) {
                s -= self.l[self.at(i, k)] * b[i];
            }
            b[k] = s / self.l[self.at(k, k)];
        }
        self.from_perm(&b)
    }
}

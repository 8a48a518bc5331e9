//! First- and second-order derivative actions of parameter-to-observable
//! maps, computed with forward (sensitivity) and adjoint solves, plus
//! finite-difference checks that only use map evaluations.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{csr_mul_vec, BandLu};
use crate::models::{PtoMap, ResidualModel, SolveCounts};

/// Derivatives of a map at a fixed expansion point.
pub trait Linearization: Send + Sync {
    fn point(&self) -> &DVector<f64>;
    /// Map value at the expansion point.
    fn value(&self) -> &DVector<f64>;

    fn param_dim(&self) -> usize {
        self.point().len()
    }

    fn obs_dim(&self) -> usize {
        self.value().len()
    }

    /// `G dz` and, if `second`, `H : (dz x dz)`, sharing the first-order
    /// solve.
    fn directional(
        &self,
        dz: &DVector<f64>,
        second: bool,
        counts: &mut SolveCounts,
    ) -> Result<(DVector<f64>, Option<DVector<f64>>)>;

    /// `G^T y` with one adjoint solve.
    fn jacobian_transpose_action(&self, y: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>>;

    fn jacobian_action(&self, dz: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        Ok(self.directional(dz, false, counts)?.0)
    }

    fn hessian_action(&self, dz: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        Ok(self.directional(dz, true, counts)?.1.expect("second-order term requested"))
    }

    /// `H : (a x b)`. Defaults to polarisation of [`Self::hessian_action`].
    fn hessian_bilinear(&self, a: &DVector<f64>, b: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        polarized_bilinear(self, a, b, counts)
    }

    /// Dense Jacobian assembled row by row with adjoint solves.
    fn jacobian_matrix(&self, counts: &mut SolveCounts) -> Result<DMatrix<f64>> {
        let (p, d) = (self.obs_dim(), self.param_dim());
        let mut g = DMatrix::zeros(p, d);
        for i in 0..p {
            let mut e = DVector::zeros(p);
            e[i] = 1.0;
            let row = self.jacobian_transpose_action(&e, counts)?;
            g.row_mut(i).copy_from(&row.transpose());
        }
        Ok(g)
    }

    /// The matrices `C^T H_i C`, one per observation, for a basis `C`.
    fn projected_hessians(&self, basis: &DMatrix<f64>, counts: &mut SolveCounts) -> Result<Vec<DMatrix<f64>>> {
        let r = basis.ncols();
        let mut out = vec![DMatrix::zeros(r, r); self.obs_dim()];
        let cols: Vec<DVector<f64>> = (0..r).map(|k| basis.column(k).into_owned()).collect();
        for k in 0..r {
            for l in k..r {
                let h = self.hessian_bilinear(&cols[k], &cols[l], counts)?;
                for (i, m) in out.iter_mut().enumerate() {
                    m[(k, l)] = h[i];
                    m[(l, k)] = h[i];
                }
            }
        }
        Ok(out)
    }
}

/// `H : (a x b) = (H:(a+b)x(a+b) - H:(a-b)x(a-b)) / 4`.
pub fn polarized_bilinear<L: Linearization + ?Sized>(
    lin: &L,
    a: &DVector<f64>,
    b: &DVector<f64>,
    counts: &mut SolveCounts,
) -> Result<DVector<f64>> {
    let hp = lin.hessian_action(&(a + b), counts)?;
    let hm = lin.hessian_action(&(a - b), counts)?;
    Ok((hp - hm) * 0.25)
}

/// Linearisation of a residual-based model at `z`: stores the state and the
/// factored state Jacobian so every further action costs one solve.
pub struct PdeLinearization<'a, R: ResidualModel + ?Sized> {
    model: &'a R,
    z: DVector<f64>,
    u: DVector<f64>,
    lu: BandLu,
    value: DVector<f64>,
}

impl<'a, R: ResidualModel + ?Sized> PdeLinearization<'a, R> {
    pub fn new(model: &'a R, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<Self> {
        let u = model.solve_state(z, counts)?;
        let lu = model.factor_state_jacobian(&u, z)?;
        let value = csr_mul_vec(model.observation(), &u);
        Ok(Self { model, z: z.clone(), u, lu, value })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.u
    }

    /// State sensitivity `r = -D_u^{-1} D_z dz`.
    pub fn state_sensitivity(&self, dz: &DVector<f64>, counts: &mut SolveCounts) -> DVector<f64> {
        counts.sensitivity += 1;
        -self.lu.solve(&self.model.param_action(&self.u, &self.z, dz))
    }

    fn second_state(
        &self,
        r1: &DVector<f64>,
        dz1: &DVector<f64>,
        r2: &DVector<f64>,
        dz2: &DVector<f64>,
        counts: &mut SolveCounts,
    ) -> DVector<f64> {
        counts.sensitivity += 1;
        let rhs = self.model.second_variation(&self.u, &self.z, r1, dz1, r2, dz2);
        -self.lu.solve(&rhs)
    }

    fn observe(&self, v: &DVector<f64>) -> DVector<f64> {
        csr_mul_vec(self.model.observation(), v)
    }
}

impl<R: ResidualModel + ?Sized> Linearization for PdeLinearization<'_, R> {
    fn point(&self) -> &DVector<f64> {
        &self.z
    }

    fn value(&self) -> &DVector<f64> {
        &self.value
    }

    fn directional(
        &self,
        dz: &DVector<f64>,
        second: bool,
        counts: &mut SolveCounts,
    ) -> Result<(DVector<f64>, Option<DVector<f64>>)> {
        crate::error::check_dim("direction", dz.len(), self.z.len())?;
        let r = self.state_sensitivity(dz, counts);
        let h = second.then(|| self.observe(&self.second_state(&r, dz, &r, dz, counts)));
        Ok((self.observe(&r), h))
    }

    fn jacobian_transpose_action(&self, y: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        counts.adjoint += 1;
        let bt = self.model.observation().transpose();
        let w = self.lu.solve_transpose(&csr_mul_vec(&bt, y));
        Ok(-self.model.param_transpose(&self.u, &self.z, &w))
    }

    fn hessian_bilinear(&self, a: &DVector<f64>, b: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        let ra = self.state_sensitivity(a, counts);
        let rb = self.state_sensitivity(b, counts);
        Ok(self.observe(&self.second_state(&ra, a, &rb, b, counts)))
    }

    fn jacobian_matrix(&self, counts: &mut SolveCounts) -> Result<DMatrix<f64>> {
        let bt = crate::linalg::csr_to_dense(self.model.observation()).transpose();
        let p = bt.ncols();
        let mut g = DMatrix::zeros(p, self.z.len());
        for i in 0..p {
            counts.adjoint += 1;
            let w = self.lu.solve_transpose(&bt.column(i).into_owned());
            let row = -self.model.param_transpose(&self.u, &self.z, &w);
            g.row_mut(i).copy_from(&row.transpose());
        }
        Ok(g)
    }

    /// `B_i[k,l] = -w_i^T second_variation(r_k, c_k, r_l, c_l)` with one
    /// sensitivity solve per basis vector and one adjoint per observation.
    fn projected_hessians(&self, basis: &DMatrix<f64>, counts: &mut SolveCounts) -> Result<Vec<DMatrix<f64>>> {
        let rank = basis.ncols();
        let cols: Vec<DVector<f64>> = (0..rank).map(|k| basis.column(k).into_owned()).collect();
        let sens: Vec<DVector<f64>> = cols.iter().map(|c| self.state_sensitivity(c, counts)).collect();
        let bt = crate::linalg::csr_to_dense(self.model.observation()).transpose();
        let p = bt.ncols();
        let mut w = DMatrix::zeros(self.u.len(), p);
        for i in 0..p {
            counts.adjoint += 1;
            w.set_column(i, &self.lu.solve_transpose(&bt.column(i).into_owned()));
        }
        let wt = w.transpose();
        let mut out = vec![DMatrix::zeros(rank, rank); p];
        for k in 0..rank {
            for l in k..rank {
                let v = self.model.second_variation(&self.u, &self.z, &sens[k], &cols[k], &sens[l], &cols[l]);
                let h = -(&wt * v);
                for (i, m) in out.iter_mut().enumerate() {
                    m[(k, l)] = h[i];
                    m[(l, k)] = h[i];
                }
            }
        }
        Ok(out)
    }
}

/// Result of a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdCheck {
    pub rel_error: f64,
    pub rel_step: f64,
}

/// Default relative steps for the finite-difference sweep.
pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

fn step_size(z: &DVector<f64>, dz: &DVector<f64>, rel: f64) -> f64 {
    rel * z.norm().max(1.0) / dz.norm().max(f64::MIN_POSITIVE)
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Compares `jac_dz` with central differences of `map` along `dz`; returns
/// the best relative error over `steps`.
pub fn fd_check_jacobian(
    map: &dyn PtoMap,
    z: &DVector<f64>,
    dz: &DVector<f64>,
    jac_dz: &DVector<f64>,
    steps: &[f64],
) -> Result<FdCheck> {
    let mut best = FdCheck { rel_error: f64::INFINITY, rel_step: f64::NAN };
    let mut c = SolveCounts::default();
    for &rel in steps {
        let h = step_size(z, dz, rel);
        let gp = map.evaluate(&(z + dz * h), &mut c)?;
        let gm = map.evaluate(&(z - dz * h), &mut c)?;
        let e = rel_err(&((gp - gm) / (2.0 * h)), jac_dz);
        if e < best.rel_error {
            best = FdCheck { rel_error: e, rel_step: rel };
        }
    }
    Ok(best)
}

/// Compares `hess_dz = H:(dz x dz)` with central differences of the
/// Jacobian action `G(z) dz` along `dz`.
pub fn fd_check_hessian(
    map: &dyn PtoMap,
    z: &DVector<f64>,
    dz: &DVector<f64>,
    hess_dz: &DVector<f64>,
    steps: &[f64],
) -> Result<FdCheck> {
    let mut best = FdCheck { rel_error: f64::INFINITY, rel_step: f64::NAN };
    let mut c = SolveCounts::default();
    for &rel in steps {
        let h = step_size(z, dz, rel);
        let jp = map.linearize(&(z + dz * h), &mut c)?.jacobian_action(dz, &mut c)?;
        let jm = map.linearize(&(z - dz * h), &mut c)?.jacobian_action(dz, &mut c)?;
        let e = rel_err(&((jp - jm) / (2.0 * h)), hess_dz);
        if e < best.rel_error {
            best = FdCheck { rel_error: e, rel_step: rel };
        }
    }
    Ok(best)
}

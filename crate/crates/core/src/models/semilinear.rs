use std::sync::Arc;

use log::debug;
use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use super::{residual_pto_map, ResidualModel, Secondary, SolveCounts};
use crate::error::{check_dim, Error, Result};
use crate::fem::{observation_matrix, p1_local_stiffness, p1_triple, Anisotropy, BoundaryLabel, Mesh};
use crate::linalg::{BandBuilder, BandLu, BandOrdering};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Stop once the residual norm has dropped by this factor.
    pub rtol: f64,
    pub max_iter: usize,
    /// Step halvings allowed per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, max_iter: 25, max_halvings: 20 }
    }
}

/// `-lap u + e^m u + e^beta |u| u = 0` with `u = g` on the `D` boundary and
/// natural conditions elsewhere. Coefficients are nodal P1; the products
/// `e^m u`, `e^beta |u| u` use nodal interpolation of the coefficient and of
/// `|u| u`, so the reaction terms reduce to exact triple products of hat
/// functions. Without `beta` the model is the linear surrogate.
#[derive(Debug, Clone)]
pub struct SemilinearModel {
    n: usize,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    elem_k: Vec<[[f64; 3]; 3]>,
    dirichlet: Vec<bool>,
    dirichlet_value: f64,
    obs: CsrMatrix<f64>,
    ordering: Arc<BandOrdering>,
    beta: Option<Secondary>,
    newton: NewtonOptions,
}

fn signed_square(u: f64) -> f64 {
    u.abs() * u
}

impl SemilinearModel {
    /// `beta = None` gives the linear surrogate in `m`.
    pub fn new(mesh: &Mesh, points: &[[f64; 2]], dirichlet_value: f64, beta: Option<Secondary>) -> Result<Self> {
        let mut dirichlet = vec![false; mesh.num_nodes()];
        let d = mesh.boundary_nodes(BoundaryLabel::D);
        if d.is_empty() {
            return Err(Error::InvalidArgument("mesh has no D boundary".into()));
        }
        for k in d {
            dirichlet[k] = true;
        }
        if let Some(Secondary::Fixed(b)) = &beta {
            check_dim("fixed beta", b.len(), mesh.num_nodes())?;
        }
        let theta = Anisotropy::identity();
        Ok(Self {
            n: mesh.num_nodes(),
            triangles: mesh.triangles.clone(),
            areas: (0..mesh.num_triangles()).map(|t| mesh.area(t)).collect(),
            elem_k: (0..mesh.num_triangles()).map(|t| p1_local_stiffness(mesh, t, &theta)).collect(),
            dirichlet,
            dirichlet_value,
            obs: observation_matrix(mesh, points)?,
            ordering: Arc::new(mesh.node_ordering()),
            beta,
            newton: NewtonOptions::default(),
        })
    }

    pub fn with_newton(mut self, opts: NewtonOptions) -> Self {
        self.newton = opts;
        self
    }

    pub fn with_fixed_beta(&self, beta: DVector<f64>) -> Result<Self> {
        check_dim("fixed beta", beta.len(), self.n)?;
        Ok(Self { beta: Some(Secondary::Fixed(beta)), ..self.clone() })
    }

    /// The model without the `|u| u` term, as a map of `m` alone.
    pub fn surrogate(&self) -> Self {
        Self { beta: None, ..self.clone() }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    fn coefficients(&self, z: &DVector<f64>) -> (DVector<f64>, Option<DVector<f64>>) {
        let em = z.rows(0, self.n).map(f64::exp);
        let eb = self.beta.as_ref().map(|b| b.split(z, self.n).1.map(f64::exp));
        (em, eb)
    }

    /// `out_i += sum_T sum_jk (phi_i phi_j phi_k) c_k v_j`.
    fn triple_apply(&self, c: &[f64], v: &[f64], out: &mut DVector<f64>) {
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.areas[t];
            for i in 0..3 {
                let mut s = 0.0;
                for j in 0..3 {
                    let vj = v[tri[j]];
                    if vj == 0.0 {
                        continue;
                    }
                    for k in 0..3 {
                        s += p1_triple(a, i, j, k) * c[tri[k]] * vj;
                    }
                }
                out[tri[i]] += s;
            }
        }
    }

    /// `out_k += sum_T sum_ij (phi_i phi_j phi_k) w_i v_j`, the transpose of
    /// `triple_apply` in its coefficient argument.
    fn triple_transpose(&self, w: &[f64], v: &[f64], out: &mut [f64]) {
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.areas[t];
            for i in 0..3 {
                let wi = w[tri[i]];
                if wi == 0.0 {
                    continue;
                }
                for j in 0..3 {
                    let wv = wi * v[tri[j]];
                    for k in 0..3 {
                        out[tri[k]] += p1_triple(a, i, j, k) * wv;
                    }
                }
            }
        }
    }

    fn mask(&self, mut v: DVector<f64>) -> DVector<f64> {
        for (k, &d) in self.dirichlet.iter().enumerate() {
            if d {
                v[k] = 0.0;
            }
        }
        v
    }

    fn residual(&self, u: &DVector<f64>, em: &DVector<f64>, eb: Option<&DVector<f64>>) -> DVector<f64> {
        let mut r = DVector::zeros(self.n);
        for (t, tri) in self.triangles.iter().enumerate() {
            let k = &self.elem_k[t];
            for i in 0..3 {
                r[tri[i]] += (0..3).map(|j| k[i][j] * u[tri[j]]).sum::<f64>();
            }
        }
        self.triple_apply(em.as_slice(), u.as_slice(), &mut r);
        if let Some(eb) = eb {
            let q = u.map(signed_square);
            self.triple_apply(eb.as_slice(), q.as_slice(), &mut r);
        }
        for (k, &d) in self.dirichlet.iter().enumerate() {
            if d {
                r[k] = u[k] - self.dirichlet_value;
            }
        }
        r
    }

    fn jacobian(&self, u: &DVector<f64>, em: &DVector<f64>, eb: Option<&DVector<f64>>) -> BandBuilder {
        let mut b = BandBuilder::new(&self.ordering);
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.areas[t];
            let k = &self.elem_k[t];
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = k[i][j];
                    for l in 0..3 {
                        let w = p1_triple(a, i, j, l);
                        v += w * em[tri[l]];
                        if let Some(eb) = eb {
                            v += w * eb[tri[l]] * 2.0 * u[tri[j]].abs();
                        }
                    }
                    b.add(tri[i], tri[j], v);
                }
            }
        }
        for (k, &d) in self.dirichlet.iter().enumerate() {
            if d {
                b.set_identity_row_col(k);
            }
        }
        b
    }

    fn lifted(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |k, _| if self.dirichlet[k] { self.dirichlet_value } else { 0.0 })
    }

    /// Linear solve of the model without the `|u| u` term.
    fn linear_state(&self, em: &DVector<f64>) -> Result<DVector<f64>> {
        let u0 = self.lifted();
        let r = self.residual(&u0, em, None);
        let lu = self.jacobian(&u0, em, None).factor_lu()?;
        Ok(u0 - lu.solve(&r))
    }

    fn newton(&self, mut u: DVector<f64>, em: &DVector<f64>, eb: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        let opts = self.newton;
        let mut r = self.residual(&u, em, Some(eb));
        let r0 = r.norm();
        let mut rn = r0;
        if r0 == 0.0 {
            return Ok(u);
        }
        for it in 1..=opts.max_iter {
            let lu = self.jacobian(&u, em, Some(eb)).factor_lu()?;
            let du = lu.solve(&r);
            counts.forward += 1;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let trial = &u - &du * step;
                let rt = self.residual(&trial, em, Some(eb));
                let rtn = rt.norm();
                if rtn < rn {
                    u = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // the residual is already at roundoff when the full step is negligible
                if du.norm() <= 1e-12 * u.norm() {
                    return Ok(u);
                }
                return Err(Error::NewtonFailed { iterations: it, ratio: rn / r0 });
            }
            if step < 1.0 {
                debug!("newton step {it} damped to {step}");
            }
            if rn <= opts.rtol * r0 {
                return Ok(u);
            }
        }
        Err(Error::NewtonFailed { iterations: opts.max_iter, ratio: rn / r0 })
    }
}

impl ResidualModel for SemilinearModel {
    fn param_dim(&self) -> usize {
        match &self.beta {
            Some(Secondary::Free) => 2 * self.n,
            _ => self.n,
        }
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn observation(&self) -> &CsrMatrix<f64> {
        &self.obs
    }

    fn solve_state(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        check_dim("parameter", z.len(), self.param_dim())?;
        let (em, eb) = self.coefficients(z);
        let u = self.linear_state(&em)?;
        match eb {
            None => {
                counts.forward += 1;
                Ok(u)
            }
            Some(eb) => {
                counts.initial_guess += 1;
                self.newton(u, &em, &eb, counts)
            }
        }
    }

    fn factor_state_jacobian(&self, u: &DVector<f64>, z: &DVector<f64>) -> Result<BandLu> {
        let (em, eb) = self.coefficients(z);
        self.jacobian(u, &em, eb.as_ref()).factor_lu()
    }

    fn param_action(&self, u: &DVector<f64>, z: &DVector<f64>, dz: &DVector<f64>) -> DVector<f64> {
        let (em, eb) = self.coefficients(z);
        let n = self.n;
        let mut out = DVector::zeros(n);
        let cm = em.component_mul(&dz.rows(0, n));
        self.triple_apply(cm.as_slice(), u.as_slice(), &mut out);
        if let (Some(Secondary::Free), Some(eb)) = (&self.beta, eb) {
            let cb = eb.component_mul(&dz.rows(n, n));
            let q = u.map(signed_square);
            self.triple_apply(cb.as_slice(), q.as_slice(), &mut out);
        }
        self.mask(out)
    }

    fn param_transpose(&self, u: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (em, eb) = self.coefficients(z);
        let n = self.n;
        let w = self.mask(w.clone());
        let mut out = DVector::zeros(self.param_dim());
        {
            let s = &mut out.as_mut_slice()[..n];
            self.triple_transpose(w.as_slice(), u.as_slice(), s);
            for (k, v) in s.iter_mut().enumerate() {
                *v *= em[k];
            }
        }
        if let (Some(Secondary::Free), Some(eb)) = (&self.beta, eb) {
            let q = u.map(signed_square);
            let s = &mut out.as_mut_slice()[n..];
            self.triple_transpose(w.as_slice(), q.as_slice(), s);
            for (k, v) in s.iter_mut().enumerate() {
                *v *= eb[k];
            }
        }
        out
    }

    fn second_variation(
        &self,
        u: &DVector<f64>,
        z: &DVector<f64>,
        r1: &DVector<f64>,
        dz1: &DVector<f64>,
        r2: &DVector<f64>,
        dz2: &DVector<f64>,
    ) -> DVector<f64> {
        let (em, eb) = self.coefficients(z);
        let n = self.n;
        let mut out = DVector::zeros(n);
        let (dm1, dm2) = (dz1.rows(0, n), dz2.rows(0, n));
        // D_uz(dz1, r2) + D_uz(dz2, r1), m part
        self.triple_apply(em.component_mul(&dm1).as_slice(), r2.as_slice(), &mut out);
        self.triple_apply(em.component_mul(&dm2).as_slice(), r1.as_slice(), &mut out);
        // D_zz, m part
        let emm = em.component_mul(&dm1).component_mul(&dm2);
        self.triple_apply(emm.as_slice(), u.as_slice(), &mut out);
        if let Some(eb) = eb {
            // D_uu: d^2(|u|u) = 2 sign(u)
            let uu = DVector::from_fn(n, |k, _| 2.0 * u[k].signum() * (u[k] != 0.0) as u8 as f64 * r1[k] * r2[k]);
            self.triple_apply(eb.as_slice(), uu.as_slice(), &mut out);
            if let Some(Secondary::Free) = &self.beta {
                let (db1, db2) = (dz1.rows(n, n), dz2.rows(n, n));
                let two_abs = u.map(|v| 2.0 * v.abs());
                let a1 = two_abs.component_mul(r2);
                let a2 = two_abs.component_mul(r1);
                self.triple_apply(eb.component_mul(&db1).as_slice(), a1.as_slice(), &mut out);
                self.triple_apply(eb.component_mul(&db2).as_slice(), a2.as_slice(), &mut out);
                let q = u.map(signed_square);
                let ebb = eb.component_mul(&db1).component_mul(&db2);
                self.triple_apply(ebb.as_slice(), q.as_slice(), &mut out);
            }
        }
        self.mask(out)
    }
}

residual_pto_map!(SemilinearModel);

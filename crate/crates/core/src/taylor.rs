//! Taylor expansion of the approximation error `eps(z) = G(z) - F(m)` about
//! the prior mean, and its exact Gaussian moments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::models::{PtoMap, SolveCounts};
use crate::prior::{CovarianceFactor, GaussianPrior};
use crate::sensitivity::Linearization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaylorOrder {
    Linear,
    Quadratic,
}

/// Solve counts of the accurate and surrogate maps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub accurate: SolveCounts,
    pub surrogate: SolveCounts,
}

impl std::ops::AddAssign for PairCounts {
    fn add_assign(&mut self, o: Self) {
        self.accurate += o.accurate;
        self.surrogate += o.surrogate;
    }
}

/// Taylor terms of `eps` at one parameter, with the solves each order cost.
#[derive(Debug, Clone)]
pub struct TaylorValue {
    pub linear: DVector<f64>,
    pub quadratic: Option<DVector<f64>>,
    pub linear_cost: PairCounts,
    pub quadratic_cost: PairCounts,
}

/// Which maps the control variate expands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expansion {
    /// Expand both `G` and `F`, so the control is a Taylor polynomial of `eps`.
    #[default]
    Error,
    /// Expand `G` only; `F` enters the samples exactly and the control is a
    /// Taylor polynomial of `G`. The moments then describe `G`, not `eps`.
    AccurateOnly,
}

/// `G` (and in the default mode `F`) linearised at the prior mean, so that
/// the expansion has moments known in closed form.
pub struct ErrorTaylor<'a> {
    accurate: Box<dyn Linearization + 'a>,
    surrogate: Option<Box<dyn Linearization + 'a>>,
    m_dim: usize,
    value: DVector<f64>,
    /// Solves spent building the expansion.
    pub setup: PairCounts,
}

impl<'a> ErrorTaylor<'a> {
    /// Expands `G` about `z0` and `F` about the leading `F.param_dim()`
    /// entries of `z0`.
    pub fn new(g: &'a dyn PtoMap, f: &'a dyn PtoMap, z0: &DVector<f64>) -> Result<Self> {
        Self::with_expansion(g, f, z0, Expansion::Error)
    }

    pub fn with_expansion(g: &'a dyn PtoMap, f: &'a dyn PtoMap, z0: &DVector<f64>, mode: Expansion) -> Result<Self> {
        check_dim("expansion point", z0.len(), g.param_dim())?;
        check_dim("observations", f.obs_dim(), g.obs_dim())?;
        let m_dim = f.param_dim();
        let mut setup = PairCounts::default();
        let accurate = g.linearize(z0, &mut setup.accurate)?;
        let surrogate = match mode {
            Expansion::Error => Some(f.linearize(&z0.rows(0, m_dim).into_owned(), &mut setup.surrogate)?),
            Expansion::AccurateOnly => None,
        };
        let value = match &surrogate {
            Some(s) => accurate.value() - s.value(),
            None => accurate.value().clone(),
        };
        Ok(Self { accurate, surrogate, m_dim, value, setup })
    }

    pub fn expansion(&self) -> Expansion {
        if self.surrogate.is_some() {
            Expansion::Error
        } else {
            Expansion::AccurateOnly
        }
    }

    pub fn point(&self) -> &DVector<f64> {
        self.accurate.point()
    }

    /// The expanded quantity at the expansion point.
    pub fn value(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn m_dim(&self) -> usize {
        self.m_dim
    }

    pub fn param_dim(&self) -> usize {
        self.accurate.param_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.value.len()
    }

    /// Linear and (optionally) quadratic Taylor approximations at `z`.
    pub fn evaluate(&self, z: &DVector<f64>, order: TaylorOrder) -> Result<TaylorValue> {
        check_dim("parameter", z.len(), self.param_dim())?;
        let quad = order == TaylorOrder::Quadratic;
        let dz = z - self.point();
        let dm = dz.rows(0, self.m_dim).into_owned();
        let (mut ca, mut cs) = (SolveCounts::default(), SolveCounts::default());
        let (jg, hg) = self.accurate.directional(&dz, quad, &mut ca)?;
        let (jf, hf) = match &self.surrogate {
            Some(s) => s.directional(&dm, quad, &mut cs)?,
            None => (DVector::zeros(self.obs_dim()), quad.then(|| DVector::zeros(self.obs_dim()))),
        };
        let linear = &self.value + jg - jf;
        let quadratic = match (hg, hf) {
            (Some(hg), Some(hf)) => Some(&linear + (hg - hf) * 0.5),
            _ => None,
        };
        // one sensitivity solve per map belongs to the linear term
        let split = |c: SolveCounts| {
            let mut lin = c;
            let mut rest = SolveCounts::default();
            if quad {
                lin.sensitivity = c.sensitivity.min(1);
                rest.sensitivity = c.sensitivity - lin.sensitivity;
            }
            (lin, rest)
        };
        let (la, qa) = split(ca);
        let (ls, qs) = split(cs);
        Ok(TaylorValue {
            linear,
            quadratic,
            linear_cost: PairCounts { accurate: la, surrogate: ls },
            quadratic_cost: PairCounts { accurate: qa, surrogate: qs },
        })
    }

    /// Jacobian `G_z - [F_m, 0]` (or `G_z`) by adjoint solves.
    pub fn jacobian_matrix(&self, counts: &mut PairCounts) -> Result<DMatrix<f64>> {
        let mut j = self.accurate.jacobian_matrix(&mut counts.accurate)?;
        if let Some(s) = &self.surrogate {
            let jf = s.jacobian_matrix(&mut counts.surrogate)?;
            let mut left = j.columns_mut(0, self.m_dim);
            left -= jf;
        }
        Ok(j)
    }

    /// `H_eps : (a x b)`.
    pub fn hessian_bilinear(&self, a: &DVector<f64>, b: &DVector<f64>, counts: &mut PairCounts) -> Result<DVector<f64>> {
        let hg = self.accurate.hessian_bilinear(a, b, &mut counts.accurate)?;
        let Some(s) = &self.surrogate else { return Ok(hg) };
        let am = a.rows(0, self.m_dim).into_owned();
        let bm = b.rows(0, self.m_dim).into_owned();
        Ok(hg - s.hessian_bilinear(&am, &bm, &mut counts.surrogate)?)
    }

    /// `C^T H_eps,i C` for each observation `i`.
    pub fn projected_hessians(&self, basis: &DMatrix<f64>, counts: &mut PairCounts) -> Result<Vec<DMatrix<f64>>> {
        check_dim("basis rows", basis.nrows(), self.param_dim())?;
        let mut bg = self.accurate.projected_hessians(basis, &mut counts.accurate)?;
        let Some(s) = &self.surrogate else { return Ok(bg) };
        let cm = basis.rows(0, self.m_dim).into_owned();
        let bf = s.projected_hessians(&cm, &mut counts.surrogate)?;
        for (g, f) in bg.iter_mut().zip(bf) {
            *g -= f;
        }
        Ok(bg)
    }
}

/// Exact moments of a Taylor approximation of `eps` under the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorMoments {
    pub order: TaylorOrder,
    #[serde(with = "crate::serial::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "crate::serial::matrix")]
    pub covariance: DMatrix<f64>,
    /// `E[(eps - mean)(z - z0)^T]`, identical for both orders.
    #[serde(with = "crate::serial::matrix")]
    pub cross_covariance: DMatrix<f64>,
}

/// Mean `eps(z0)`, covariance `J Gamma J^T`, cross-covariance `J Gamma`.
pub fn linear_moments(taylor: &ErrorTaylor<'_>, prior: &GaussianPrior, counts: &mut PairCounts) -> Result<TaylorMoments> {
    check_dim("prior", prior.dim(), taylor.param_dim())?;
    let j = taylor.jacobian_matrix(counts)?;
    let gamma_jt = prior.covariance_times(&j.transpose())?;
    let cov = &j * &gamma_jt;
    Ok(TaylorMoments {
        order: TaylorOrder::Linear,
        mean: taylor.value().clone(),
        covariance: crate::linalg::symmetrize(&cov),
        cross_covariance: gamma_jt.transpose(),
    })
}

/// Adds `H : Gamma / 2` to the mean and `Q_ij = tr(B_i B_j) / 2` to the
/// covariance, with `B_i = C^T H_i C` for the prior factor `C`.
pub fn quadratic_moments(
    taylor: &ErrorTaylor<'_>,
    prior: &GaussianPrior,
    factor: &CovarianceFactor,
    counts: &mut PairCounts,
) -> Result<TaylorMoments> {
    let lin = linear_moments(taylor, prior, counts)?;
    let b = taylor.projected_hessians(&factor.columns, counts)?;
    Ok(add_quadratic_terms(lin, &b))
}

fn add_quadratic_terms(mut m: TaylorMoments, b: &[DMatrix<f64>]) -> TaylorMoments {
    let p = b.len();
    for (i, bi) in b.iter().enumerate() {
        m.mean[i] += 0.5 * bi.trace();
    }
    for i in 0..p {
        for j in i..p {
            let q = 0.5 * b[i].dot(&b[j]);
            m.covariance[(i, j)] += q;
            if i != j {
                m.covariance[(j, i)] += q;
            }
        }
    }
    m.order = TaylorOrder::Quadratic;
    m
}

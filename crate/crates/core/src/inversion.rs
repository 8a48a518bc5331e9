//! MAP estimation and Laplace posteriors for the surrogate model with a
//! Gaussian total-error model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimators::{total_error_model, ErrorStats, Estimator};
use crate::linalg::symmetrize;
use crate::models::{NoiseModel, PtoMap, SolveCounts};
use crate::prior::GaussianPrior;
use crate::spectral::{LowRankNoiseInverse, RankRule};

/// Inverse of the total-error covariance used to weight the misfit.
#[derive(Debug, Clone)]
pub enum NoiseWeight {
    Dense { covariance: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
    /// Low-rank update of the noise precision; `covariance` is the inverse
    /// of the approximate precision.
    LowRank { inverse: LowRankNoiseInverse, covariance: DMatrix<f64> },
}

impl NoiseWeight {
    pub fn dense(covariance: DMatrix<f64>) -> Result<Self> {
        let chol = covariance.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(NoiseWeight::Dense { covariance, chol })
    }

    pub fn low_rank(error_cov: &DMatrix<f64>, noise_cov: &DMatrix<f64>, rule: RankRule) -> Result<Self> {
        let inverse = LowRankNoiseInverse::new(error_cov, noise_cov, rule)?;
        let covariance = crate::linalg::spd_inverse(&inverse.to_dense())?;
        Ok(NoiseWeight::LowRank { inverse, covariance })
    }

    pub fn apply_inverse(&self, r: &DVector<f64>) -> DVector<f64> {
        match self {
            NoiseWeight::Dense { chol, .. } => chol.solve(r),
            NoiseWeight::LowRank { inverse, .. } => inverse.apply(r),
        }
    }

    /// Covariance whose inverse is applied.
    pub fn covariance(&self) -> &DMatrix<f64> {
        match self {
            NoiseWeight::Dense { covariance, .. } | NoiseWeight::LowRank { covariance, .. } => covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance().nrows()
    }
}

/// `min 0.5 |d - F(m) - eta0|^2_W + 0.5 |m - m0|^2_{Gamma_m^{-1}}`.
pub struct InverseProblem<'a> {
    pub surrogate: &'a dyn PtoMap,
    pub prior: &'a GaussianPrior,
    pub data: DVector<f64>,
    pub error_mean: DVector<f64>,
    pub weight: NoiseWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// Stop when the gradient norm falls below this fraction of its
    /// initial value.
    pub gradient_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub max_halvings: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { gradient_tol: 1e-8, max_iter: 200, armijo: 1e-4, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub objective: Vec<f64>,
    pub gradient_norm: Vec<f64>,
    pub step_length: Vec<f64>,
    pub converged: bool,
    pub solves: SolveCounts,
}

impl OptimizerTrace {
    pub fn iterations(&self) -> usize {
        self.step_length.len()
    }
}

struct Local {
    residual: DVector<f64>,
    objective: f64,
}

impl InverseProblem<'_> {
    pub fn new<'a>(
        surrogate: &'a dyn PtoMap,
        prior: &'a GaussianPrior,
        data: DVector<f64>,
        error_mean: DVector<f64>,
        weight: NoiseWeight,
    ) -> Result<InverseProblem<'a>> {
        check_dim("prior", prior.dim(), surrogate.param_dim())?;
        check_dim("data", data.len(), surrogate.obs_dim())?;
        check_dim("error mean", error_mean.len(), data.len())?;
        check_dim("noise weight", weight.dim(), data.len())?;
        Ok(InverseProblem { surrogate, prior, data, error_mean, weight })
    }

    fn local(&self, m: &DVector<f64>, counts: &mut SolveCounts) -> Result<Local> {
        let residual = &self.data - self.surrogate.evaluate(m, counts)? - &self.error_mean;
        let w = self.weight.apply_inverse(&residual);
        let objective = 0.5 * residual.dot(&w) + self.prior.neg_log_density(m)?;
        Ok(Local { residual, objective })
    }

    pub fn objective(&self, m: &DVector<f64>) -> Result<f64> {
        Ok(self.local(m, &mut SolveCounts::default())?.objective)
    }

    /// Gradient through one adjoint solve.
    pub fn gradient(&self, m: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>> {
        let lin = self.surrogate.linearize(m, counts)?;
        let r = &self.data - lin.value() - &self.error_mean;
        let misfit = lin.jacobian_transpose_action(&self.weight.apply_inverse(&r), counts)?;
        Ok(self.prior.apply_precision(&(m - self.prior.mean()))? - misfit)
    }

    /// Returns `Gamma_m J^T` and `S = J Gamma_m J^T + W^{-1}` factored.
    fn data_space(&self, j: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
        let gjt = self.prior.covariance_times(&j.transpose())?;
        let s = symmetrize(&(j * &gjt + self.weight.covariance()));
        let chol = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok((gjt, chol))
    }

    /// Gauss-Newton with Armijo backtracking from `init`.
    pub fn map_estimate(&self, init: &DVector<f64>, opts: &MapOptions) -> Result<(DVector<f64>, OptimizerTrace)> {
        check_dim("initial iterate", init.len(), self.prior.dim())?;
        if init.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial iterate is not finite".into()));
        }
        let mut trace = OptimizerTrace::default();
        let mut m = init.clone();
        let mut cur = self.local(&m, &mut trace.solves)?;
        let mut g0 = None;
        for it in 0..=opts.max_iter {
            let lin = self.surrogate.linearize(&m, &mut trace.solves)?;
            let w = self.weight.apply_inverse(&cur.residual);
            let g = self.prior.apply_precision(&(&m - self.prior.mean()))?
                - lin.jacobian_transpose_action(&w, &mut trace.solves)?;
            let gn = g.norm();
            trace.objective.push(cur.objective);
            trace.gradient_norm.push(gn);
            let g0 = *g0.get_or_insert(gn);
            if gn <= opts.gradient_tol * g0 || gn == 0.0 {
                trace.converged = true;
                return Ok((m, trace));
            }
            if it == opts.max_iter {
                break;
            }
            let j = lin.jacobian_matrix(&mut trace.solves)?;
            drop(lin);
            let (gjt, s) = self.data_space(&j)?;
            let gg = self.prior.apply_covariance(&g)?;
            let step = -(&gg - &gjt * s.solve(&(&j * &gg)));
            let slope = g.dot(&step);
            if slope >= 0.0 || -slope <= 1e-12 * cur.objective.abs().max(f64::MIN_POSITIVE) {
                // predicted decrease is below the roundoff of the objective
                trace.converged = true;
                return Ok((m, trace));
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let trial = &m + &step * alpha;
                match self.local(&trial, &mut trace.solves) {
                    Ok(l) if l.objective <= cur.objective + opts.armijo * alpha * slope => {
                        accepted = Some((trial, l));
                        break;
                    }
                    Ok(_) | Err(Error::NewtonFailed { .. }) | Err(Error::Singular { .. }) => alpha *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let Some((trial, l)) = accepted else {
                log::warn!("line search failed; objective trace {:?}", trace.objective);
                return Err(Error::Optimization { reason: "line search failed".into(), iterations: it });
            };
            trace.step_length.push(alpha);
            m = trial;
            cur = l;
        }
        log::warn!("no convergence; gradient norms {:?}", trace.gradient_norm);
        Err(Error::Optimization { reason: "maximum iterations reached".into(), iterations: opts.max_iter })
    }

    /// `(J^T W J + Gamma_m^{-1})^{-1}` at `m`, in data-space form.
    pub fn laplace_covariance(&self, m: &DVector<f64>, counts: &mut SolveCounts) -> Result<DMatrix<f64>> {
        let lin = self.surrogate.linearize(m, counts)?;
        let j = lin.jacobian_matrix(counts)?;
        let (gjt, s) = self.data_space(&j)?;
        let cov = self.prior.dense_covariance() - &gjt * s.solve(&gjt.transpose());
        Ok(symmetrize(&cov))
    }
}

/// Gaussian posterior approximation around the MAP point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacePosterior {
    #[serde(with = "crate::serial::vector")]
    pub map: DVector<f64>,
    #[serde(with = "crate::serial::matrix")]
    pub covariance: DMatrix<f64>,
    pub trace: OptimizerTrace,
    /// Error model the posterior was computed with; `None` ignores errors.
    pub estimator: Option<Estimator>,
    pub n: usize,
}

/// How the total-error precision is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    #[default]
    Dense,
    LowRank(RankRule),
}

/// Builds the total-error model from `stats` (or the noise alone when
/// `None`) and returns the Laplace posterior.
pub fn solve_bae(
    surrogate: &dyn PtoMap,
    prior: &GaussianPrior,
    data: &DVector<f64>,
    stats: Option<&ErrorStats>,
    noise: &NoiseModel,
    mode: WeightMode,
    opts: &MapOptions,
) -> Result<LaplacePosterior> {
    let (mean, weight) = match (stats, mode) {
        (Some(s), WeightMode::Dense) => {
            let (mean, cov) = total_error_model(s, noise)?;
            (mean, NoiseWeight::dense(cov)?)
        }
        (Some(s), WeightMode::LowRank(rule)) => {
            check_dim("error statistics", s.mean.len(), noise.dim())?;
            (&s.mean + &noise.mean, NoiseWeight::low_rank(&s.covariance, &noise.covariance, rule)?)
        }
        (None, _) => (noise.mean.clone(), NoiseWeight::dense(noise.covariance.clone())?),
    };
    let prob = InverseProblem::new(surrogate, prior, data.clone(), mean, weight)?;
    let (map, mut trace) = prob.map_estimate(&prior.mean(), opts)?;
    let covariance = prob.laplace_covariance(&map, &mut trace.solves)?;
    Ok(LaplacePosterior {
        map,
        covariance,
        trace,
        estimator: stats.map(|s| s.estimator),
        n: stats.map_or(0, |s| s.n),
    })
}

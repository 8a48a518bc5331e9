use std::sync::OnceLock;

use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use super::config::{ModelConfig, StudyConfig};
use crate::error::{Error, Result};
use crate::estimators::{cv_stats, mc_stats, sample_free_stats, ErrorSample, ErrorStats, Estimator, SamplingPlan};
use crate::fem::{build_rect_mesh, BoundaryLabel, Mesh, SideLabels, Space};
use crate::inversion::{solve_bae, LaplacePosterior};
use crate::models::{DataRealization, NoiseModel, PtoMap, RobinModel, Secondary, SemilinearModel, SolveCounts};
use crate::prior::{GaussianBlock, GaussianPrior};
use crate::taylor::{linear_moments, quadratic_moments, ErrorTaylor, Expansion, PairCounts, TaylorMoments, TaylorOrder};

/// Seed for stream `index` of the named purpose.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
}

enum Models {
    Robin { accurate: RobinModel, surrogate: RobinModel },
    Semilinear { accurate: SemilinearModel, surrogate: SemilinearModel },
}

/// Highest Taylor order any of `estimators` needs.
pub fn required_order(estimators: &[Estimator]) -> Option<TaylorOrder> {
    estimators.iter().filter(|e| e.uses_samples()).filter_map(|e| e.order()).max()
}

/// A configured example: mesh, priors, model pair, truth and noise, with
/// lazily computed Taylor moments and reference statistics.
pub struct Experiment {
    pub config: StudyConfig,
    pub mesh: Mesh,
    pub prior: GaussianPrior,
    pub prior_m: GaussianPrior,
    models: Models,
    pub truth: DVector<f64>,
    pub noise: NoiseModel,
    moments: [OnceLock<(TaylorMoments, PairCounts)>; 2],
    reference: OnceLock<ErrorStats>,
}

impl Experiment {
    pub fn build(config: StudyConfig) -> Result<Self> {
        use BoundaryLabel::*;
        config.validate()?;
        let c = &config;
        let form = c.precision_form;
        let (mesh, models, prior_m, prior_b) = match &c.model {
            ModelConfig::Robin { flux, beta_star } => {
                let labels = SideLabels { bottom: I, right: A, top: A, left: A };
                let mesh = build_rect_mesh(c.mesh.nx, c.mesh.ny, c.mesh.lx, c.mesh.ly, labels)?;
                let pm = GaussianBlock::new(&mesh, Space::Boundary(I), &c.prior_m, form)?;
                let pb = GaussianBlock::new(&mesh, Space::P0, &c.prior_beta, form)?;
                let accurate = RobinModel::new(&mesh, &c.observation_points, *flux, Secondary::Free)?;
                let star = beta_star.map_or_else(|| pb.mean.clone(), |b| DVector::from_element(pb.dim(), b));
                let surrogate = accurate.with_fixed_beta(star)?;
                (mesh, Models::Robin { accurate, surrogate }, pm, pb)
            }
            ModelConfig::Semilinear { dirichlet, newton } => {
                let labels = SideLabels { bottom: D, right: N, top: N, left: D };
                let mesh = build_rect_mesh(c.mesh.nx, c.mesh.ny, c.mesh.lx, c.mesh.ly, labels)?;
                let pm = GaussianBlock::new(&mesh, Space::P1, &c.prior_m, form)?;
                let pb = GaussianBlock::new(&mesh, Space::P1, &c.prior_beta, form)?;
                let accurate = SemilinearModel::new(&mesh, &c.observation_points, *dirichlet, Some(Secondary::Free))?
                    .with_newton(*newton);
                let surrogate = accurate.surrogate();
                (mesh, Models::Semilinear { accurate, surrogate }, pm, pb)
            }
        };
        let prior_m = GaussianPrior::single(prior_m);
        let prior = GaussianPrior::product(&[&prior_m, &GaussianPrior::single(prior_b)]);
        let mut exp = Experiment {
            config,
            mesh,
            prior,
            prior_m,
            models,
            truth: DVector::zeros(0),
            noise: NoiseModel::white(1, 1.0)?,
            moments: [OnceLock::new(), OnceLock::new()],
            reference: OnceLock::new(),
        };
        exp.truth = exp.prior.sample_at(exp.seed("truth", 0), 0)?;
        let y = exp.accurate().evaluate(&exp.truth, &mut SolveCounts::default())?;
        exp.noise = NoiseModel::relative_to_range(&y, exp.config.noise_fraction)?;
        Ok(exp)
    }

    pub fn seed(&self, purpose: &str, index: u64) -> u64 {
        derive_seed(self.config.seed, purpose, index)
    }

    pub fn accurate(&self) -> &dyn PtoMap {
        match &self.models {
            Models::Robin { accurate, .. } => accurate,
            Models::Semilinear { accurate, .. } => accurate,
        }
    }

    pub fn surrogate(&self) -> &dyn PtoMap {
        match &self.models {
            Models::Robin { surrogate, .. } => surrogate,
            Models::Semilinear { surrogate, .. } => surrogate,
        }
    }

    /// The accurate model with beta held at the given field, as a map of `m`.
    pub fn fixed_beta_model(&self, beta: DVector<f64>) -> Result<Box<dyn PtoMap>> {
        Ok(match &self.models {
            Models::Robin { accurate, .. } => Box::new(accurate.with_fixed_beta(beta)?),
            Models::Semilinear { accurate, .. } => Box::new(accurate.with_fixed_beta(beta)?),
        })
    }

    pub fn m_dim(&self) -> usize {
        self.prior_m.dim()
    }

    pub fn mass_m(&self) -> &CsrMatrix<f64> {
        &self.prior_m.block(0).mass
    }

    /// Noise variance of the first observation (the noise is white).
    pub fn noise_variance(&self) -> f64 {
        self.noise.covariance[(0, 0)]
    }

    /// Taylor expansion about the prior mean.
    pub fn taylor(&self) -> Result<ErrorTaylor<'_>> {
        ErrorTaylor::with_expansion(self.accurate(), self.surrogate(), &self.prior.mean(), self.config.expansion)
    }

    /// Taylor moments of the given order, computed once, with the solves
    /// they took.
    pub fn moments(&self, taylor: &ErrorTaylor<'_>, order: TaylorOrder) -> Result<&(TaylorMoments, PairCounts)> {
        let slot = &self.moments[order as usize];
        if let Some(m) = slot.get() {
            return Ok(m);
        }
        let mut counts = PairCounts::default();
        let m = match order {
            TaylorOrder::Linear => linear_moments(taylor, &self.prior, &mut counts)?,
            TaylorOrder::Quadratic => {
                let f = self.prior.covariance_factor(self.config.factor_trace_tol, self.config.factor_max_rank)?;
                log::info!(
                    "covariance factor rank {} (discarded trace fraction {:.2e})",
                    f.rank(),
                    f.truncated_trace_fraction
                );
                quadratic_moments(taylor, &self.prior, &f, &mut counts)?
            }
        };
        Ok(slot.get_or_init(|| (m, counts)))
    }

    /// Samples `start..start+count` of stream `seed`, with Taylor values
    /// up to `order`.
    pub fn draw(
        &self,
        taylor: Option<&ErrorTaylor<'_>>,
        order: Option<TaylorOrder>,
        seed: u64,
        count: usize,
        keep_params: bool,
    ) -> Result<Vec<ErrorSample>> {
        let taylor = match (taylor, order) {
            (Some(t), Some(o)) => Some((t, o)),
            (None, Some(_)) => return Err(Error::InvalidArgument("Taylor values requested without an expansion".into())),
            _ => None,
        };
        let plan = SamplingPlan {
            accurate: self.accurate(),
            surrogate: self.surrogate(),
            prior: &self.prior,
            taylor,
            keep_params,
        };
        plan.draw(seed, 0, count)
    }

    /// Statistics of `est` from the first `n` samples (ignored for
    /// sample-free estimators).
    pub fn estimate(
        &self,
        taylor: Option<&ErrorTaylor<'_>>,
        est: Estimator,
        samples: &[ErrorSample],
        n: usize,
        seed: u64,
    ) -> Result<ErrorStats> {
        let z0 = self.prior.mean();
        let z0 = samples.first().and_then(|s| s.z.as_ref()).map(|_| &z0);
        let moments = |order| -> Result<&TaylorMoments> {
            let t = taylor.ok_or_else(|| Error::InvalidArgument(format!("{est} needs a Taylor expansion")))?;
            Ok(&self.moments(t, order)?.0)
        };
        if !est.uses_samples() && taylor.is_some_and(|t| t.expansion() == Expansion::AccurateOnly) {
            return Err(Error::InvalidArgument(format!("{est} needs the expansion of the error")));
        }
        if n > samples.len() && est.uses_samples() {
            return Err(Error::InvalidArgument(format!("{n} samples requested, {} drawn", samples.len())));
        }
        let mut stats = match est {
            Estimator::Mc => mc_stats(&samples[..n], z0, seed)?,
            Estimator::CvLin => cv_stats(&samples[..n], moments(TaylorOrder::Linear)?, z0, seed)?,
            Estimator::CvQuad => cv_stats(&samples[..n], moments(TaylorOrder::Quadratic)?, z0, seed)?,
            Estimator::SampleFreeLin => sample_free_stats(moments(TaylorOrder::Linear)?),
            Estimator::SampleFreeQuad => sample_free_stats(moments(TaylorOrder::Quadratic)?),
        };
        if !est.uses_samples() {
            stats.seed = seed;
        }
        Ok(stats)
    }

    /// Plain Monte Carlo statistics from `reference_n` draws of the
    /// reference stream, computed once.
    pub fn reference(&self) -> Result<&ErrorStats> {
        if let Some(r) = self.reference.get() {
            return Ok(r);
        }
        let seed = self.seed("reference", 0);
        log::info!("computing reference statistics from {} samples", self.config.reference_n);
        let samples = self.draw(None, None, seed, self.config.reference_n, false)?;
        let stats = mc_stats(&samples, None, seed)?;
        Ok(self.reference.get_or_init(|| stats))
    }

    /// Installs previously computed reference statistics.
    pub fn set_reference(&self, stats: ErrorStats) -> Result<()> {
        crate::error::check_dim("reference mean", stats.mean.len(), self.noise.dim())?;
        self.reference.set(stats).map_err(|_| Error::InvalidArgument("reference already set".into()))
    }

    /// Data realization `i`: a prior draw observed with the accurate model
    /// plus noise.
    pub fn data_realization(&self, i: u64) -> Result<DataRealization> {
        let truth = self.prior.sample_at(self.seed("data-truth", 0), i)?;
        crate::models::make_data(self.accurate(), &truth, &self.noise, self.seed("data-noise", 0), i)
    }

    /// Laplace posterior of `m` with the surrogate and error statistics
    /// (`None` ignores the error).
    pub fn posterior(&self, data: &DVector<f64>, stats: Option<&ErrorStats>) -> Result<LaplacePosterior> {
        solve_bae(self.surrogate(), &self.prior_m, data, stats, &self.noise, self.config.weight, &self.config.map)
    }

    /// Posterior computed with the accurate model at the true beta and no
    /// error model.
    pub fn true_beta_posterior(&self, realization: &DataRealization) -> Result<LaplacePosterior> {
        let n = self.m_dim();
        let beta = realization.truth.rows(n, realization.truth.len() - n).into_owned();
        let model = self.fixed_beta_model(beta)?;
        solve_bae(model.as_ref(), &self.prior_m, &realization.data, None, &self.noise, self.config.weight, &self.config.map)
    }
}

/// `count` draws from `N(mean, cov)`, draw `k` on stream `(seed, k)`.
pub fn gaussian_draws(mean: &DVector<f64>, cov: &nalgebra::DMatrix<f64>, seed: u64, count: usize) -> Result<Vec<DVector<f64>>> {
    let l = crate::linalg::cholesky_lower(&crate::linalg::symmetrize(cov))?;
    Ok((0..count as u64)
        .map(|k| mean + &l * crate::rng::standard_normal(&mut crate::rng::stream(seed, k), mean.len()))
        .collect())
}

//! Estimators of the approximation-error mean, covariance and
//! cross-covariance: plain Monte Carlo, Taylor control variates, and the
//! sample-free Taylor moments.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::{NoiseModel, PtoMap};
use crate::prior::GaussianPrior;
use crate::rng;
use crate::taylor::{ErrorTaylor, PairCounts, TaylorMoments, TaylorOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Mc,
    CvLin,
    CvQuad,
    SampleFreeLin,
    SampleFreeQuad,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Mc,
        Estimator::CvLin,
        Estimator::CvQuad,
        Estimator::SampleFreeLin,
        Estimator::SampleFreeQuad,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Estimator::Mc => "mc",
            Estimator::CvLin => "cv-lin",
            Estimator::CvQuad => "cv-quad",
            Estimator::SampleFreeLin => "sample-free-lin",
            Estimator::SampleFreeQuad => "sample-free-quad",
        }
    }

    /// Taylor order the estimator relies on, if any.
    pub fn order(&self) -> Option<TaylorOrder> {
        match self {
            Estimator::Mc => None,
            Estimator::CvLin | Estimator::SampleFreeLin => Some(TaylorOrder::Linear),
            Estimator::CvQuad | Estimator::SampleFreeQuad => Some(TaylorOrder::Quadratic),
        }
    }

    pub fn uses_samples(&self) -> bool {
        matches!(self, Estimator::Mc | Estimator::CvLin | Estimator::CvQuad)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator '{s}'")))
    }
}

/// One prior draw with its error and, when requested, the Taylor
/// control-variate values.
#[derive(Debug, Clone)]
pub struct ErrorSample {
    pub index: u64,
    pub eps: DVector<f64>,
    pub linear: Option<DVector<f64>>,
    pub quadratic: Option<DVector<f64>>,
    pub z: Option<DVector<f64>>,
    /// Digest of the drawn parameter, for checking that two runs saw the
    /// same draws.
    pub param_hash: u64,
    /// Solves for `G(z)` and `F(m)`.
    pub cost_eps: PairCounts,
    /// Additional solves for the linear term.
    pub cost_linear: PairCounts,
    /// Additional solves for the quadratic term.
    pub cost_quadratic: PairCounts,
    pub rejections: usize,
    pub failures: usize,
}

impl ErrorSample {
    /// Solves this sample costs under `est`.
    pub fn cost(&self, est: Estimator) -> PairCounts {
        let mut c = self.cost_eps;
        if matches!(est, Estimator::CvLin | Estimator::CvQuad) {
            c += self.cost_linear;
        }
        if est == Estimator::CvQuad {
            c += self.cost_quadratic;
        }
        c
    }

    fn control(&self, order: TaylorOrder) -> Option<&DVector<f64>> {
        match order {
            TaylorOrder::Linear => self.linear.as_ref(),
            TaylorOrder::Quadratic => self.quadratic.as_ref(),
        }
    }
}

/// What to compute for each draw.
pub struct SamplingPlan<'a> {
    pub accurate: &'a dyn PtoMap,
    pub surrogate: &'a dyn PtoMap,
    pub prior: &'a GaussianPrior,
    /// Taylor expansion and the highest order to evaluate.
    pub taylor: Option<(&'a ErrorTaylor<'a>, TaylorOrder)>,
    pub keep_params: bool,
}

/// First eight bytes of the SHA-256 of the little-endian coefficients.
pub fn param_hash(z: &DVector<f64>) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in z.iter() {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

const MAX_ATTEMPTS: usize = 10;

fn retryable(e: &Error) -> bool {
    matches!(e, Error::NewtonFailed { .. } | Error::Singular { .. } | Error::NotPositiveDefinite)
}

impl SamplingPlan<'_> {
    fn one(&self, seed: u64, index: u64) -> Result<ErrorSample> {
        let mut stream = rng::stream(seed, index);
        let m_dim = self.surrogate.param_dim();
        let mut failures = 0;
        let mut rejections = 0;
        loop {
            let (z, rej) = self.prior.draw(&mut stream)?;
            rejections += rej;
            let mut cost = PairCounts::default();
            let m = z.rows(0, m_dim).into_owned();
            let eps = self
                .accurate
                .evaluate(&z, &mut cost.accurate)
                .and_then(|g| Ok(g - self.surrogate.evaluate(&m, &mut cost.surrogate)?));
            let eps = match eps {
                Ok(e) => e,
                Err(e) if retryable(&e) && failures + 1 < MAX_ATTEMPTS => {
                    log::warn!("sample {index}: {e}; redrawing");
                    failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut s = ErrorSample {
                index,
                eps,
                linear: None,
                quadratic: None,
                z: None,
                param_hash: param_hash(&z),
                cost_eps: cost,
                cost_linear: PairCounts::default(),
                cost_quadratic: PairCounts::default(),
                rejections,
                failures,
            };
            if let Some((t, order)) = self.taylor {
                let v = t.evaluate(&z, order)?;
                s.linear = Some(v.linear);
                s.quadratic = v.quadratic;
                s.cost_linear = v.linear_cost;
                s.cost_quadratic = v.quadratic_cost;
            }
            if self.keep_params {
                s.z = Some(z);
            }
            return Ok(s);
        }
    }

    /// Draws samples `start..start+count` of the stream `seed`, in parallel,
    /// returned in index order.
    pub fn draw(&self, seed: u64, start: u64, count: usize) -> Result<Vec<ErrorSample>> {
        if let Some((t, _)) = self.taylor {
            check_dim("taylor parameter", t.param_dim(), self.prior.dim())?;
        }
        check_dim("accurate parameter", self.accurate.param_dim(), self.prior.dim())?;
        let out: Vec<ErrorSample> = (start..start + count as u64)
            .into_par_iter()
            .map(|k| self.one(seed, k))
            .collect::<Result<_>>()?;
        let failed: usize = out.iter().map(|s| s.failures).sum();
        if failed * 10 > count + failed {
            return Err(Error::SampleFailures { failed, attempted: count + failed });
        }
        Ok(out)
    }
}

/// Estimated error statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub estimator: Estimator,
    /// Number of samples (zero for sample-free estimates).
    pub n: usize,
    pub seed: u64,
    #[serde(with = "crate::serial::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "crate::serial::matrix")]
    pub covariance: DMatrix<f64>,
    #[serde(with = "crate::serial::opt_matrix", default)]
    pub cross_covariance: Option<DMatrix<f64>>,
    /// Solves spent on the samples (setup of the expansion excluded).
    pub cost: PairCounts,
}

fn centred(vs: &[&DVector<f64>]) -> (DVector<f64>, Vec<DVector<f64>>) {
    let n = vs.len() as f64;
    let mean = vs.iter().fold(DVector::zeros(vs[0].len()), |a, v| a + *v) / n;
    let c = vs.iter().map(|v| *v - &mean).collect();
    (mean, c)
}

fn outer_sum(a: &[DVector<f64>], b: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a[0].len(), b[0].len());
    for (x, y) in a.iter().zip(b) {
        m.ger(1.0, x, y, 1.0);
    }
    m
}

fn cost_of(samples: &[ErrorSample], est: Estimator) -> PairCounts {
    let mut c = PairCounts::default();
    for s in samples {
        c += s.cost(est);
    }
    c
}

fn param_deviations(samples: &[ErrorSample], z0: Option<&DVector<f64>>) -> Option<Vec<DVector<f64>>> {
    let z0 = z0?;
    samples.iter().map(|s| s.z.as_ref().map(|z| z - z0)).collect()
}

/// Sample mean and unbiased sample covariance of `eps`; with `z0` and
/// stored parameters also the cross-covariance with `z`.
pub fn mc_stats(samples: &[ErrorSample], z0: Option<&DVector<f64>>, seed: u64) -> Result<ErrorStats> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", samples.len())));
    }
    let nm1 = (samples.len() - 1) as f64;
    let (mean, c) = centred(&samples.iter().map(|s| &s.eps).collect::<Vec<_>>());
    let covariance = crate::linalg::symmetrize(&(outer_sum(&c, &c) / nm1));
    let cross_covariance = param_deviations(samples, z0).map(|dz| outer_sum(&c, &dz) / nm1);
    Ok(ErrorStats {
        estimator: Estimator::Mc,
        n: samples.len(),
        seed,
        mean,
        covariance,
        cross_covariance,
        cost: cost_of(samples, Estimator::Mc),
    })
}

/// Control-variate estimate: sample statistics of `eps - eps_T` corrected
/// by the exact moments of the Taylor term `eps_T`.
pub fn cv_stats(
    samples: &[ErrorSample],
    moments: &TaylorMoments,
    z0: Option<&DVector<f64>>,
    seed: u64,
) -> Result<ErrorStats> {
    let order = moments.order;
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", samples.len())));
    }
    let ctl: Vec<&DVector<f64>> = samples
        .iter()
        .map(|s| s.control(order))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidArgument(format!("samples lack {order:?} control values")))?;
    let nm1 = (samples.len() - 1) as f64;
    let (me, ce) = centred(&samples.iter().map(|s| &s.eps).collect::<Vec<_>>());
    let (mc, cc) = centred(&ctl);
    let mean = me - mc + &moments.mean;
    let cov = (outer_sum(&ce, &ce) - outer_sum(&cc, &cc)) / nm1 + &moments.covariance;
    let cross_covariance = param_deviations(samples, z0).map(|dz| {
        let diff: Vec<DVector<f64>> = ce.iter().zip(&cc).map(|(a, b)| a - b).collect();
        outer_sum(&diff, &dz) / nm1 + &moments.cross_covariance
    });
    let estimator = match order {
        TaylorOrder::Linear => Estimator::CvLin,
        TaylorOrder::Quadratic => Estimator::CvQuad,
    };
    Ok(ErrorStats {
        estimator,
        n: samples.len(),
        seed,
        mean,
        covariance: crate::linalg::symmetrize(&cov),
        cross_covariance,
        cost: cost_of(samples, estimator),
    })
}

/// The Taylor moments themselves, used as the error statistics.
pub fn sample_free_stats(moments: &TaylorMoments) -> ErrorStats {
    ErrorStats {
        estimator: match moments.order {
            TaylorOrder::Linear => Estimator::SampleFreeLin,
            TaylorOrder::Quadratic => Estimator::SampleFreeQuad,
        },
        n: 0,
        seed: 0,
        mean: moments.mean.clone(),
        covariance: moments.covariance.clone(),
        cross_covariance: Some(moments.cross_covariance.clone()),
        cost: PairCounts::default(),
    }
}

/// Gaussian statistics of the error given `m`.
#[derive(Debug, Clone)]
pub struct ConditionalStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub min_eigenvalue: f64,
    /// Set when the covariance has an eigenvalue below `-1e-10 ||cov||`.
    /// The covariance is left as computed.
    pub indefinite: bool,
}

/// Error statistics conditioned on `m`: mean `eps0 + C_em C_m^{-1}(m - m0)`
/// and covariance `C_e - C_em C_m^{-1} C_me`, with `C_em` the first
/// `prior_m.dim()` columns of the coefficient cross-covariance. Weighting
/// the cross-covariance and the prior covariance operator by the mass
/// matrix gives the same result, since the weights cancel.
pub fn conditional_stats(stats: &ErrorStats, prior_m: &GaussianPrior, m: &DVector<f64>) -> Result<ConditionalStats> {
    let cross = stats
        .cross_covariance
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("statistics carry no cross-covariance".into()))?;
    let n = prior_m.dim();
    check_dim("m", m.len(), n)?;
    if cross.ncols() < n {
        return Err(Error::Dimension(format!("cross-covariance has {} columns, m has {n}", cross.ncols())));
    }
    let gem = cross.columns(0, n).into_owned();
    let shift = prior_m.apply_precision(&(m - prior_m.mean()))?;
    let mean = &stats.mean + &gem * shift;
    let mut w = DMatrix::zeros(n, gem.nrows());
    for i in 0..gem.nrows() {
        w.set_column(i, &prior_m.apply_precision(&gem.row(i).transpose())?);
    }
    let covariance = crate::linalg::symmetrize(&(&stats.covariance - &gem * w));
    let min_eigenvalue = crate::linalg::sym_eigenvalues(&covariance)?.iter().copied().fold(f64::INFINITY, f64::min);
    let indefinite = min_eigenvalue < -1e-10 * covariance.norm();
    if indefinite {
        log::warn!("conditional error covariance is indefinite (min eigenvalue {min_eigenvalue:.3e})");
    }
    Ok(ConditionalStats { mean, covariance, min_eigenvalue, indefinite })
}

/// Mean and covariance of the total error `eps + e`. Negative eigenvalues
/// of the error covariance are clipped to zero first.
pub fn total_error_model(stats: &ErrorStats, noise: &NoiseModel) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim("noise", noise.dim(), stats.mean.len())?;
    let eig = crate::linalg::sym_eigen(&stats.covariance)?;
    let clipped = eig.values.iter().filter(|&&l| l < 0.0).count();
    let cov = if clipped > 0 {
        log::info!("clipped {clipped} negative eigenvalues of the {} error covariance", stats.estimator);
        let mut vl = eig.vectors.clone();
        for (j, &l) in eig.values.iter().enumerate() {
            vl.column_mut(j).scale_mut(l.max(0.0));
        }
        vl * eig.vectors.transpose()
    } else {
        stats.covariance.clone()
    };
    Ok((&stats.mean + &noise.mean, crate::linalg::symmetrize(&(cov + &noise.covariance))))
}

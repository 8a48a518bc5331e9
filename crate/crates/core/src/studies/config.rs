use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::fem::Anisotropy;
use crate::inversion::{MapOptions, WeightMode};
use crate::models::NewtonOptions;
use crate::prior::{PrecisionForm, PriorParams};
use crate::rng;
use crate::spectral::{DEFAULT_MONITOR_TOL, DEFAULT_THRESHOLD};
use crate::taylor::Expansion;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

/// The forward model pair. The Robin model uses the bottom side as the
/// inaccessible boundary and the other sides as the flux boundary; the
/// semilinear model has Dirichlet data on the left and bottom sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Surrogate fixes beta at `beta_star` (the prior mean when absent).
    Robin { flux: f64, beta_star: Option<f64> },
    /// Surrogate drops the nonlinear absorption term.
    Semilinear {
        dirichlet: f64,
        #[serde(default)]
        newton: NewtonOptions,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub mesh: MeshConfig,
    pub model: ModelConfig,
    pub prior_m: PriorParams,
    pub prior_beta: PriorParams,
    #[serde(default)]
    pub precision_form: PrecisionForm,
    pub observation_points: Vec<[f64; 2]>,
    /// Noise standard deviation as a fraction of the range of the noiseless
    /// observations of the truth.
    pub noise_fraction: f64,
    /// Master seed; every stream in a study derives from it.
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub reference_n: usize,
    pub data_realizations: usize,
    pub posterior_estimators: Vec<Estimator>,
    pub posterior_n_grid: Vec<usize>,
    pub posterior_seeds: usize,
    /// Relative trace discarded per prior block in the covariance factor
    /// used by the quadratic moments.
    pub factor_trace_tol: f64,
    #[serde(default)]
    pub factor_max_rank: Option<usize>,
    /// Maps expanded by the Taylor control variates.
    #[serde(default)]
    pub expansion: Expansion,
    #[serde(default = "default_threshold")]
    pub spectrum_threshold: f64,
    #[serde(default = "default_monitor_tol")]
    pub monitor_tol: f64,
    /// Number of estimator seeds whose spectra are written.
    #[serde(default = "one")]
    pub spectrum_seeds: usize,
    #[serde(default)]
    pub weight: WeightMode,
    #[serde(default)]
    pub map: MapOptions,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_monitor_tol() -> f64 {
    DEFAULT_MONITOR_TOL
}

fn one() -> usize {
    1
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_grid(name: &str, grid: &[usize], min: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(config_err(format!("{name} is empty")));
    }
    if grid[0] < min {
        return Err(config_err(format!("{name} entries must be at least {min}")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

/// Points drawn uniformly in `[0, lx] x [0, ly]`.
pub fn random_points(seed: u64, count: usize, lx: f64, ly: f64) -> Vec<[f64; 2]> {
    use rand::Rng;
    let mut r = rng::stream(seed, 0);
    (0..count).map(|_| [r.random::<f64>() * lx, r.random::<f64>() * ly]).collect()
}

/// Seed used to draw the observation points of the first example.
pub const EXAMPLE1_POINT_SEED: u64 = 20_240_125;

impl StudyConfig {
    /// Linear diffusion with an unknown Robin coefficient, desk-scale study
    /// sizes.
    pub fn example1() -> Self {
        StudyConfig {
            name: "example1".into(),
            mesh: MeshConfig { nx: 50, ny: 15, lx: 1.0, ly: 0.25 },
            model: ModelConfig::Robin { flux: 1.0, beta_star: None },
            prior_m: PriorParams { mean: 7.0, gamma: 10.0, kappa: 0.1, theta: Anisotropy::identity(), lower_bound: None },
            prior_beta: PriorParams {
                mean: 7.0,
                gamma: 100.0,
                kappa: 100.0,
                theta: Anisotropy::diag(1.0, 0.025),
                lower_bound: Some(1e-6),
            },
            precision_form: PrecisionForm::L2,
            observation_points: random_points(EXAMPLE1_POINT_SEED, 25, 1.0, 0.25),
            noise_fraction: 0.01,
            seed: 1,
            estimators: vec![
                Estimator::Mc,
                Estimator::CvLin,
                Estimator::CvQuad,
                Estimator::SampleFreeLin,
                Estimator::SampleFreeQuad,
            ],
            n_grid: vec![2, 5, 10, 20, 50, 100, 200, 500, 1000],
            seeds: 20,
            reference_n: 20_000,
            data_realizations: 5,
            posterior_estimators: vec![Estimator::Mc, Estimator::CvLin, Estimator::CvQuad, Estimator::SampleFreeQuad],
            posterior_n_grid: vec![2, 5, 10, 20, 50, 100],
            posterior_seeds: 10,
            factor_trace_tol: 1e-4,
            factor_max_rank: None,
            expansion: Expansion::Error,
            spectrum_threshold: DEFAULT_THRESHOLD,
            monitor_tol: DEFAULT_MONITOR_TOL,
            spectrum_seeds: 1,
            weight: WeightMode::Dense,
            map: MapOptions::default(),
        }
    }

    /// Semilinear diffusion with nonlinear absorption, desk-scale study
    /// sizes.
    pub fn example2() -> Self {
        let grid: Vec<[f64; 2]> =
            (0..18 * 18).map(|k| [((k % 18) + 1) as f64 / 19.0, ((k / 18) + 1) as f64 / 19.0]).collect();
        StudyConfig {
            name: "example2".into(),
            mesh: MeshConfig { nx: 40, ny: 40, lx: 1.0, ly: 1.0 },
            model: ModelConfig::Semilinear { dirichlet: 1.0, newton: NewtonOptions::default() },
            prior_m: PriorParams { mean: 0.0, gamma: 200.0, kappa: 4.0, theta: Anisotropy::identity(), lower_bound: None },
            prior_beta: PriorParams { mean: 2.0, gamma: 100.0, kappa: 100.0, theta: Anisotropy::identity(), lower_bound: None },
            precision_form: PrecisionForm::L2,
            observation_points: grid,
            noise_fraction: 0.01,
            seed: 2,
            estimators: vec![Estimator::Mc, Estimator::CvLin, Estimator::SampleFreeLin],
            n_grid: vec![2, 5, 10, 20, 50, 100, 200, 500],
            seeds: 10,
            reference_n: 5_000,
            data_realizations: 5,
            posterior_estimators: vec![Estimator::Mc, Estimator::CvLin, Estimator::SampleFreeLin],
            posterior_n_grid: vec![5, 10, 20],
            posterior_seeds: 10,
            factor_trace_tol: 1e-3,
            factor_max_rank: None,
            expansion: Expansion::Error,
            spectrum_threshold: DEFAULT_THRESHOLD,
            monitor_tol: DEFAULT_MONITOR_TOL,
            spectrum_seeds: 1,
            weight: WeightMode::Dense,
            map: MapOptions::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "example1" | "1" => Ok(Self::example1()),
            "example2" | "2" => Ok(Self::example2()),
            _ => Err(config_err(format!("unknown example '{name}'"))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| config_err(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if m.nx < 2 || m.ny < 2 || !(m.lx > 0.0) || !(m.ly > 0.0) {
            return Err(config_err("mesh needs nx, ny >= 2 and positive lengths"));
        }
        if self.observation_points.is_empty() {
            return Err(config_err("no observation points"));
        }
        if !(self.noise_fraction > 0.0 && self.noise_fraction.is_finite()) {
            return Err(config_err("noise_fraction must be positive"));
        }
        if self.estimators.is_empty() {
            return Err(config_err("no estimators"));
        }
        let sample_free = |e: &Estimator| !e.uses_samples();
        if self.expansion == Expansion::AccurateOnly
            && (self.estimators.iter().any(sample_free) || self.posterior_estimators.iter().any(sample_free))
        {
            return Err(config_err("sample-free estimators need the expansion of the error"));
        }
        check_grid("n_grid", &self.n_grid, 2)?;
        check_grid("posterior_n_grid", &self.posterior_n_grid, 2)?;
        if self.seeds == 0 || self.posterior_seeds == 0 {
            return Err(config_err("seed counts must be at least 1"));
        }
        if self.reference_n < 2 {
            return Err(config_err("reference_n must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.factor_trace_tol) {
            return Err(config_err("factor_trace_tol must lie in [0, 1)"));
        }
        if !(self.spectrum_threshold >= 0.0) || !(self.monitor_tol > 0.0) {
            return Err(config_err("spectrum threshold and monitor tolerance must be nonnegative"));
        }
        Ok(())
    }
}

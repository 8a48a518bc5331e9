//! Parameter-to-observable maps: the two PDE model problems, their
//! surrogates, and synthetic affine/quadratic maps with known derivatives.

mod robin;
mod semilinear;
mod synthetic;

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, BandLu};
use crate::rng;
use crate::sensitivity::Linearization;

pub use robin::RobinModel;
pub use semilinear::{NewtonOptions, SemilinearModel};
pub use synthetic::{AffineMap, QuadraticMap};

/// Linear solves performed, by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    /// Forward solves: one per linear solve, one per Newton step.
    pub forward: u64,
    /// Linear surrogate solves used only as a Newton starting guess.
    pub initial_guess: u64,
    /// Incremental forward (sensitivity) solves.
    pub sensitivity: u64,
    /// Adjoint solves.
    pub adjoint: u64,
}

impl SolveCounts {
    /// Forward plus sensitivity solves: the per-sample cost measure.
    pub fn linearized(&self) -> u64 {
        self.forward + self.sensitivity
    }
}

impl AddAssign for SolveCounts {
    fn add_assign(&mut self, o: Self) {
        self.forward += o.forward;
        self.initial_guess += o.initial_guess;
        self.sensitivity += o.sensitivity;
        self.adjoint += o.adjoint;
    }
}

/// A map from a parameter vector to observations.
pub trait PtoMap: Send + Sync {
    fn param_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn evaluate(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>>;
    /// Derivative information at `z`; `counts` receives the setup solves.
    fn linearize(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<Box<dyn Linearization + '_>>;
}

/// Discrete residual `R(u, z) = 0` with observations `B u`, and the
/// derivative actions needed for first- and second-order sensitivities.
/// All actions are masked on essential-boundary rows.
pub trait ResidualModel: Send + Sync {
    fn param_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn observation(&self) -> &CsrMatrix<f64>;
    fn solve_state(&self, z: &DVector<f64>, counts: &mut SolveCounts) -> Result<DVector<f64>>;
    /// Factored `D_u R(u, z)`.
    fn factor_state_jacobian(&self, u: &DVector<f64>, z: &DVector<f64>) -> Result<BandLu>;
    /// `D_z R(u, z) dz`.
    fn param_action(&self, u: &DVector<f64>, z: &DVector<f64>, dz: &DVector<f64>) -> DVector<f64>;
    /// `D_z R(u, z)^T w`.
    fn param_transpose(&self, u: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64>;
    /// `D_uu(r1, r2) + D_uz(dz1, r2) + D_uz(dz2, r1) + D_zz(dz1, dz2)`,
    /// symmetric in the pairs `(r1, dz1)`, `(r2, dz2)`.
    fn second_variation(
        &self,
        u: &DVector<f64>,
        z: &DVector<f64>,
        r1: &DVector<f64>,
        dz1: &DVector<f64>,
        r2: &DVector<f64>,
        dz2: &DVector<f64>,
    ) -> DVector<f64>;
}

macro_rules! residual_pto_map {
    ($t:ty) => {
        impl $crate::models::PtoMap for $t {
            fn param_dim(&self) -> usize {
                $crate::models::ResidualModel::param_dim(self)
            }
            fn obs_dim(&self) -> usize {
                $crate::models::ResidualModel::observation(self).nrows()
            }
            fn evaluate(
                &self,
                z: &nalgebra::DVector<f64>,
                counts: &mut $crate::models::SolveCounts,
            ) -> $crate::error::Result<nalgebra::DVector<f64>> {
                let u = self.solve_state(z, counts)?;
                Ok($crate::linalg::csr_mul_vec(self.observation(), &u))
            }
            fn linearize(
                &self,
                z: &nalgebra::DVector<f64>,
                counts: &mut $crate::models::SolveCounts,
            ) -> $crate::error::Result<Box<dyn $crate::sensitivity::Linearization + '_>> {
                Ok(Box::new($crate::sensitivity::PdeLinearization::new(self, z, counts)?))
            }
        }
    };
}
pub(crate) use residual_pto_map;

/// Additive Gaussian measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl NoiseModel {
    pub fn white(p: usize, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std {std} must be positive")));
        }
        Ok(Self { mean: DVector::zeros(p), covariance: DMatrix::identity(p, p) * (std * std) })
    }

    /// Standard deviation equal to `fraction` of the range of `y`.
    pub fn relative_to_range(y: &DVector<f64>, fraction: f64) -> Result<Self> {
        let range = y.max() - y.min();
        Self::white(y.len(), fraction * range)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw(&self, seed: u64, index: u64) -> Result<DVector<f64>> {
        let l = cholesky_lower(&self.covariance)?;
        let xi = rng::standard_normal(&mut rng::stream(seed, index), self.dim());
        Ok(&self.mean + l * xi)
    }
}

/// Synthetic measurement: true parameter, noiseless observation and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRealization {
    pub truth: DVector<f64>,
    pub noiseless: DVector<f64>,
    pub data: DVector<f64>,
}

pub fn make_data(
    map: &dyn PtoMap,
    truth: &DVector<f64>,
    noise: &NoiseModel,
    seed: u64,
    index: u64,
) -> Result<DataRealization> {
    let noiseless = map.evaluate(truth, &mut SolveCounts::default())?;
    let data = &noiseless + noise.draw(seed, index)?;
    Ok(DataRealization { truth: truth.clone(), noiseless, data })
}

/// Which part of the parameter vector carries the secondary field.
#[derive(Debug, Clone, PartialEq)]
pub enum Secondary {
    /// Parameter is `[m; beta]`.
    Free,
    /// Parameter is `m`; beta is held at the given field.
    Fixed(DVector<f64>),
}

impl Secondary {
    /// Splits `z` into `(m, beta)` views.
    pub(crate) fn split<'a>(&'a self, z: &'a DVector<f64>, n_m: usize) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        match self {
            Secondary::Free => (z.rows(0, n_m), z.rows(n_m, z.len() - n_m)),
            Secondary::Fixed(b) => (z.rows(0, n_m), b.rows(0, b.len())),
        }
    }

    pub(crate) fn is_free(&self) -> bool {
        matches!(self, Secondary::Free)
    }
}

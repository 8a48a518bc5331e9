//! Approximation-error statistics for Bayesian inverse problems.
//!
//! The accurate parameter-to-observable map `G(m, beta)` is replaced by a
//! cheaper surrogate `F(m)`; the error `eps = G - F` is modelled as Gaussian
//! with statistics estimated by Monte Carlo, by Taylor control variates, or
//! without sampling from the Taylor expansion alone.

pub mod error;
pub mod estimators;
pub mod fem;
pub mod inversion;
pub mod linalg;
pub mod models;
pub mod prior;
pub mod rng;
pub mod sensitivity;
pub mod serial;
pub mod spectral;
pub mod studies;
pub mod taylor;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};

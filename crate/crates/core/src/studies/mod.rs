//! Experiment orchestration: configurations, convergence and posterior
//! studies, cost accounting, metrics and the files they write.

pub mod config;
pub mod convergence;
pub mod cost;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod posterior;

pub use config::{MeshConfig, ModelConfig, StudyConfig};
pub use convergence::{convergence_study, ConvergenceReport, ConvergenceRow, SpectrumRow, SummaryRow};
pub use cost::{cost_ledger, CostLedger, CostRow};
pub use experiment::{derive_seed, gaussian_draws, required_order, Experiment};
pub use metrics::{loglog_slope, median, quantile, wasserstein2_sq, W2Reference};
pub use posterior::{posterior_study, PosteriorReport, PosteriorRow};

use serde::{Deserialize, Serialize};

use super::experiment::{required_order, Experiment};
use super::metrics::{frobenius_error, mean, quantile, vector_errors};
use crate::error::{Error, Result};
use crate::estimators::{ErrorStats, Estimator};
use crate::spectral::{generalized_eig, spectrum_monitor, SpectrumEntry, SpectrumReport};

/// Error of one estimate against the reference statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub estimator: String,
    pub n: usize,
    pub seed: usize,
    pub err_mean_l2: f64,
    pub err_mean_linf: f64,
    pub err_cov_fro: f64,
}

/// One generalized eigenvalue of an error covariance, with the noise
/// variance drawn as the reference line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub estimator: String,
    pub n: usize,
    pub seed: usize,
    pub index: usize,
    pub eigenvalue: f64,
    pub noise_variance: f64,
}

/// Distribution of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub q05: f64,
    pub q95: f64,
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(data: &[f64]) -> Self {
        let m = mean(data);
        let var = if data.len() > 1 {
            data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (data.len() - 1) as f64
        } else {
            0.0
        };
        Spread {
            median: quantile(data, 0.5),
            q25: quantile(data, 0.25),
            q75: quantile(data, 0.75),
            q05: quantile(data, 0.05),
            q95: quantile(data, 0.95),
            mean: m,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub n: usize,
    pub count: usize,
    pub err_mean_l2: Spread,
    pub err_mean_linf: Spread,
    pub err_cov_fro: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub reference_n: usize,
    pub rows: Vec<ConvergenceRow>,
    pub summary: Vec<SummaryRow>,
    pub spectra: Vec<SpectrumRow>,
    /// Spectrum monitor of the first seed, per sampling estimator.
    pub monitors: Vec<(Estimator, SpectrumReport)>,
}

impl ConvergenceReport {
    pub fn summary_for(&self, est: Estimator, n: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.estimator == est.tag() && r.n == n)
    }

    /// Values of one metric for `est` at `n`, in seed order.
    pub fn values(&self, est: Estimator, n: usize, metric: impl Fn(&ConvergenceRow) -> f64) -> Vec<f64> {
        self.rows.iter().filter(|r| r.estimator == est.tag() && r.n == n).map(metric).collect()
    }
}

fn spectrum_rows(label: &str, n: usize, seed: usize, values: &[f64], noise_variance: f64) -> Vec<SpectrumRow> {
    values
        .iter()
        .enumerate()
        .map(|(index, &eigenvalue)| SpectrumRow { estimator: label.into(), n, seed, index, eigenvalue, noise_variance })
        .collect()
}

fn summarize(rows: &[ConvergenceRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(e, n)| *e == r.estimator && *n == r.n) {
            keys.push((r.estimator.clone(), r.n));
        }
    }
    keys.into_iter()
        .map(|(estimator, n)| {
            let cell: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.estimator == estimator && r.n == n).collect();
            let col = |f: fn(&ConvergenceRow) -> f64| Spread::of(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                count: cell.len(),
                err_mean_l2: col(|r| r.err_mean_l2),
                err_mean_linf: col(|r| r.err_mean_linf),
                err_cov_fro: col(|r| r.err_cov_fro),
                estimator,
                n,
            }
        })
        .collect()
}

fn row(stats: &ErrorStats, reference: &ErrorStats, seed: usize) -> ConvergenceRow {
    let (l2, linf) = vector_errors(&stats.mean, &reference.mean);
    ConvergenceRow {
        estimator: stats.estimator.tag().into(),
        n: stats.n,
        seed,
        err_mean_l2: l2,
        err_mean_linf: linf,
        err_cov_fro: frobenius_error(&stats.covariance, &reference.covariance),
    }
}

/// Errors of every configured estimator over the sample-size grid and
/// seeds, against `reference`. Sample-free estimators appear at `n = 0`.
pub fn convergence_study(exp: &Experiment, reference: &ErrorStats) -> Result<ConvergenceReport> {
    let c = &exp.config;
    if reference.mean.len() != exp.noise.dim() || reference.covariance.nrows() != exp.noise.dim() {
        return Err(Error::Config("reference statistics do not match the experiment".into()));
    }
    let noise = &exp.noise.covariance;
    let noise_variance = exp.noise_variance();
    let spectrum = |cov: &nalgebra::DMatrix<f64>| -> Result<Vec<f64>> { Ok(generalized_eig(cov, noise)?.values.iter().copied().collect()) };

    let sampling: Vec<Estimator> = c.estimators.iter().copied().filter(|e| e.uses_samples()).collect();
    let needs_taylor = c.estimators.iter().any(|e| e.order().is_some());
    let taylor = if needs_taylor { Some(exp.taylor()?) } else { None };
    let order = required_order(&c.estimators);
    let n_max = *c.n_grid.last().expect("validated grid");

    let mut rows = Vec::new();
    let mut spectra = spectrum_rows("reference", reference.n, 0, &spectrum(&reference.covariance)?, noise_variance);
    let mut entries: Vec<Vec<SpectrumEntry>> = vec![Vec::new(); sampling.len()];

    for est in c.estimators.iter().filter(|e| !e.uses_samples()) {
        let stats = exp.estimate(taylor.as_ref(), *est, &[], 0, 0)?;
        rows.push(row(&stats, reference, 0));
        spectra.extend(spectrum_rows(est.tag(), 0, 0, &spectrum(&stats.covariance)?, noise_variance));
    }
    if !sampling.is_empty() {
        for s in 0..c.seeds {
            let seed = exp.seed("estimator", s as u64);
            log::info!("convergence seed {s}: drawing {n_max} samples");
            let samples = exp.draw(taylor.as_ref(), order, seed, n_max, false)?;
            for (k, est) in sampling.iter().enumerate() {
                for &n in &c.n_grid {
                    let stats = exp.estimate(taylor.as_ref(), *est, &samples, n, seed)?;
                    rows.push(row(&stats, reference, s));
                    if s < c.spectrum_seeds {
                        let values = spectrum(&stats.covariance)?;
                        if s == 0 {
                            entries[k].push(SpectrumEntry { n, eigenvalues: values.clone() });
                        }
                        spectra.extend(spectrum_rows(est.tag(), n, s, &values, noise_variance));
                    }
                }
            }
        }
    }
    let mut monitors = Vec::new();
    for (est, e) in sampling.iter().zip(entries) {
        if e.len() >= 2 {
            monitors.push((*est, spectrum_monitor(e, c.spectrum_threshold, c.monitor_tol)?));
        }
    }
    Ok(ConvergenceReport { reference_n: reference.n, summary: summarize(&rows), rows, spectra, monitors })
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::convergence::Spread;
use super::experiment::{required_order, Experiment};
use super::metrics::{m_norm, W2Reference};
use crate::error::{Error, Result};
use crate::estimators::{ErrorStats, Estimator};
use crate::inversion::LaplacePosterior;

/// Label of the posterior that ignores the approximation error.
pub const IGNORE_ERRORS: &str = "ignore-errors";
/// Label of the posterior computed with the true auxiliary field.
pub const BETA_TRUE: &str = "beta-true";
/// Label of the reference pipeline run a second time.
pub const REFERENCE: &str = "reference";

/// Accuracy of one approximate posterior against the reference posterior
/// of the same data realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub realization: usize,
    pub estimator: String,
    pub n: usize,
    pub seed: usize,
    /// Mass-norm distance between the MAP points.
    pub map_error: f64,
    pub w2_sq: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummaryRow {
    pub estimator: String,
    pub n: usize,
    pub count: usize,
    pub map_error: Spread,
    pub w2_sq: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub reference_n: usize,
    pub rows: Vec<PosteriorRow>,
    pub summary: Vec<PosteriorSummaryRow>,
    /// Cells whose inversion failed; they are excluded from the rows.
    pub failures: usize,
}

impl PosteriorReport {
    pub fn summary_for(&self, estimator: &str, n: usize) -> Option<&PosteriorSummaryRow> {
        self.summary.iter().find(|r| r.estimator == estimator && r.n == n)
    }
}

fn summarize(rows: &[PosteriorRow]) -> Vec<PosteriorSummaryRow> {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(e, n)| *e == r.estimator && *n == r.n) {
            keys.push((r.estimator.clone(), r.n));
        }
    }
    keys.into_iter()
        .map(|(estimator, n)| {
            let cell: Vec<&PosteriorRow> = rows.iter().filter(|r| r.estimator == estimator && r.n == n).collect();
            PosteriorSummaryRow {
                count: cell.len(),
                map_error: Spread::of(&cell.iter().map(|r| r.map_error).collect::<Vec<_>>()),
                w2_sq: Spread::of(&cell.iter().map(|r| r.w2_sq).collect::<Vec<_>>()),
                estimator,
                n,
            }
        })
        .collect()
}

/// Error statistics for every posterior cell, independent of the data.
/// Entries are `(stats, seed index)`.
pub fn posterior_stats_table(exp: &Experiment, extra_mc: &[usize]) -> Result<Vec<(ErrorStats, usize)>> {
    let c = &exp.config;
    let taylor = if c.posterior_estimators.iter().any(|e| e.order().is_some()) { Some(exp.taylor()?) } else { None };
    let order = required_order(&c.posterior_estimators);
    let sampling: Vec<Estimator> = c.posterior_estimators.iter().copied().filter(|e| e.uses_samples()).collect();
    let mut table = Vec::new();
    for est in c.posterior_estimators.iter().filter(|e| !e.uses_samples()) {
        table.push((exp.estimate(taylor.as_ref(), *est, &[], 0, 0)?, 0));
    }
    let grid_max = *c.posterior_n_grid.last().expect("validated grid");
    let extra_max = extra_mc.iter().copied().max().unwrap_or(0);
    for s in 0..c.posterior_seeds {
        let seed = exp.seed("estimator", s as u64);
        let n_max = if sampling.is_empty() { 0 } else { grid_max };
        let n_max = if s == 0 { n_max.max(extra_max) } else { n_max };
        if n_max == 0 {
            continue;
        }
        let samples = exp.draw(taylor.as_ref(), order, seed, n_max, false)?;
        for est in &sampling {
            for &n in &c.posterior_n_grid {
                table.push((exp.estimate(taylor.as_ref(), *est, &samples, n, seed)?, s));
            }
        }
        if s == 0 {
            for &n in extra_mc.iter().filter(|n| !c.posterior_n_grid.contains(n) || !sampling.contains(&Estimator::Mc)) {
                table.push((exp.estimate(None, Estimator::Mc, &samples, n, seed)?, 0));
            }
        }
    }
    Ok(table)
}

fn evaluate(
    exp: &Experiment,
    reference: &W2Reference,
    realization: usize,
    label: &str,
    n: usize,
    seed: usize,
    post: Result<LaplacePosterior>,
) -> Option<PosteriorRow> {
    let cell = || -> Result<PosteriorRow> {
        let post = post?;
        Ok(PosteriorRow {
            realization,
            estimator: label.into(),
            n,
            seed,
            map_error: m_norm(&(&post.map - &reference.map), exp.mass_m()),
            w2_sq: reference.distance_sq(&post.map, &post.covariance, exp.mass_m())?,
            iterations: post.trace.iterations(),
        })
    };
    match cell() {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("posterior cell ({realization}, {label}, N={n}, seed {seed}) failed: {e}");
            None
        }
    }
}

/// Double loop over data realizations and error statistics. `extra_mc`
/// adds plain Monte Carlo cells at further sample sizes on the first seed.
pub fn posterior_study(exp: &Experiment, reference: &ErrorStats, extra_mc: &[usize]) -> Result<PosteriorReport> {
    let c = &exp.config;
    if reference.mean.len() != exp.noise.dim() {
        return Err(Error::Config("reference statistics do not match the experiment".into()));
    }
    let table = posterior_stats_table(exp, extra_mc)?;
    let mut rows = Vec::new();
    let mut failures = 0;
    for i in 0..c.data_realizations {
        let data = exp.data_realization(i as u64)?;
        let ref_post = exp.posterior(&data.data, Some(reference))?;
        let w2_ref = W2Reference::new(&ref_post)?;
        log::info!("realization {i}: reference MAP after {} iterations", ref_post.trace.iterations());

        let mut jobs: Vec<(String, usize, usize, Option<&ErrorStats>)> = vec![
            (IGNORE_ERRORS.into(), 0, 0, None),
            (BETA_TRUE.into(), 0, 0, None),
            (REFERENCE.into(), reference.n, 0, Some(reference)),
        ];
        jobs.extend(table.iter().map(|(s, seed)| (s.estimator.tag().to_string(), s.n, *seed, Some(s))));
        let results: Vec<Option<PosteriorRow>> = jobs
            .par_iter()
            .map(|(label, n, seed, stats)| {
                let post = if label == BETA_TRUE { exp.true_beta_posterior(&data) } else { exp.posterior(&data.data, *stats) };
                evaluate(exp, &w2_ref, i, label, *n, *seed, post)
            })
            .collect();
        failures += results.iter().filter(|r| r.is_none()).count();
        rows.extend(results.into_iter().flatten());
    }
    if failures > 0 {
        log::warn!("{failures} posterior cells failed and were excluded");
    }
    Ok(PosteriorReport { reference_n: reference.n, summary: summarize(&rows), rows, failures })
}

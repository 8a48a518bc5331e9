use serde::{Deserialize, Serialize};

use super::experiment::Experiment;
use crate::error::Result;
use crate::estimators::Estimator;
use crate::taylor::TaylorOrder;

/// Solves spent on one sample under one estimator. `n_fwd` is the number
/// of forward solves of the accurate model (Newton steps for a nonlinear
/// model); the expected linearized count is `n_fwd` plus the Taylor order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub estimator: String,
    pub sample: u64,
    pub n_fwd: u64,
    pub initial_guess: u64,
    pub sensitivity: u64,
    pub linearized: u64,
    pub expected: u64,
    pub surrogate_linearized: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub estimator: String,
    pub samples: usize,
    pub mean_linearized: f64,
    pub min_n_fwd: u64,
    pub max_n_fwd: u64,
    /// Mean linearized solves relative to plain Monte Carlo.
    pub overhead: f64,
    pub matches_expected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub seed: u64,
    pub rows: Vec<CostRow>,
    pub summary: Vec<CostSummary>,
}

impl CostLedger {
    pub fn summary_for(&self, est: Estimator) -> Option<&CostSummary> {
        self.summary.iter().find(|s| s.estimator == est.tag())
    }
}

fn extra(est: Estimator) -> u64 {
    match est {
        Estimator::CvLin => 1,
        Estimator::CvQuad => 2,
        _ => 0,
    }
}

/// Per-sample solve counts of `samples` draws, one sampling pass per
/// estimator on the same stream.
pub fn cost_ledger(exp: &Experiment, samples: usize, seed: u64) -> Result<CostLedger> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    if samples == 0 {
        return Ok(CostLedger { seed, rows, summary });
    }
    let taylor = exp.taylor()?;
    let mut mc_mean = None;
    for (est, order) in [
        (Estimator::Mc, None),
        (Estimator::CvLin, Some(TaylorOrder::Linear)),
        (Estimator::CvQuad, Some(TaylorOrder::Quadratic)),
    ] {
        let drawn = exp.draw(order.map(|_| &taylor), order, seed, samples, false)?;
        let first = rows.len();
        for s in &drawn {
            let c = s.cost(est);
            rows.push(CostRow {
                estimator: est.tag().into(),
                sample: s.index,
                n_fwd: s.cost_eps.accurate.forward,
                initial_guess: c.accurate.initial_guess,
                sensitivity: c.accurate.sensitivity,
                linearized: c.accurate.linearized(),
                expected: s.cost_eps.accurate.forward + extra(est),
                surrogate_linearized: c.surrogate.linearized(),
            });
        }
        let mine = &rows[first..];
        let mean = mine.iter().map(|r| r.linearized as f64).sum::<f64>() / mine.len() as f64;
        let mc = *mc_mean.get_or_insert(mean);
        summary.push(CostSummary {
            estimator: est.tag().into(),
            samples: mine.len(),
            mean_linearized: mean,
            min_n_fwd: mine.iter().map(|r| r.n_fwd).min().unwrap_or(0),
            max_n_fwd: mine.iter().map(|r| r.n_fwd).max().unwrap_or(0),
            overhead: mean / mc,
            matches_expected: mine.iter().all(|r| r.linearized == r.expected),
        });
    }
    Ok(CostLedger { seed, rows, summary })
}

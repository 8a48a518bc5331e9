//! File formats shared with the plotting tools. Column names are part of
//! the contract; readers reject files with missing columns by name.

use std::fs::File;
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::StudyConfig;
use super::convergence::{ConvergenceRow, Spread, SpectrumRow, SummaryRow};
use super::cost::CostRow;
use super::posterior::{PosteriorRow, PosteriorSummaryRow};
use crate::error::{Error, Result};
use crate::fem::{Mesh, Space};
use crate::inversion::LaplacePosterior;

/// Version of the column contract.
pub const SCHEMA_VERSION: u32 = 1;

pub const CONVERGENCE_COLUMNS: &[&str] = &["estimator", "n", "seed", "err_mean_l2", "err_mean_linf", "err_cov_fro"];
pub const SPECTRUM_COLUMNS: &[&str] = &["estimator", "n", "seed", "index", "eigenvalue", "noise_variance"];
pub const POSTERIOR_COLUMNS: &[&str] =
    &["realization", "estimator", "n", "seed", "map_error", "w2_sq", "iterations"];
pub const COST_COLUMNS: &[&str] = &[
    "estimator",
    "sample",
    "n_fwd",
    "initial_guess",
    "sensitivity",
    "linearized",
    "expected",
    "surrogate_linearized",
];
const SPREAD_FIELDS: &[&str] = &["median", "q25", "q75", "q05", "q95", "mean", "std"];

/// Columns of a summary table over the given metrics.
pub fn summary_columns(metrics: &[&str]) -> Vec<String> {
    let mut cols = vec!["estimator".to_string(), "n".into(), "count".into()];
    for m in metrics {
        cols.extend(SPREAD_FIELDS.iter().map(|f| format!("{m}_{f}")));
    }
    cols
}

pub const CONVERGENCE_METRICS: &[&str] = &["err_mean_l2", "err_mean_linf", "err_cov_fro"];
pub const POSTERIOR_METRICS: &[&str] = &["map_error", "w2_sq"];

fn spread_fields(s: &Spread) -> [f64; 7] {
    [s.median, s.q25, s.q75, s.q05, s.q95, s.mean, s.std]
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// Writes serializable flat rows; the header comes from the field names.
pub fn write_rows<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(columns)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Checks that `headers` contains every column of `columns`.
pub fn check_columns(headers: &csv::StringRecord, columns: &[&str], what: &str) -> Result<()> {
    for c in columns {
        if !headers.iter().any(|h| h == *c) {
            return Err(Error::Config(format!("{what}: missing column '{c}'")));
        }
    }
    Ok(())
}

/// Reads rows after checking the header against `columns`.
pub fn read_rows<T: DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    check_columns(r.headers()?, columns, &path.display().to_string())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_summary<'a>(
    path: &Path,
    metrics: &[&str],
    rows: impl Iterator<Item = (&'a str, usize, usize, Vec<&'a Spread>)>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(summary_columns(metrics))?;
    for (est, n, count, spreads) in rows {
        let mut rec = vec![est.to_string(), n.to_string(), count.to_string()];
        for s in spreads {
            rec.extend(spread_fields(s).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    write_rows(path, CONVERGENCE_COLUMNS, rows)
}

pub fn read_convergence(path: &Path) -> Result<Vec<ConvergenceRow>> {
    read_rows(path, CONVERGENCE_COLUMNS)
}

pub fn write_spectra(path: &Path, rows: &[SpectrumRow]) -> Result<()> {
    write_rows(path, SPECTRUM_COLUMNS, rows)
}

pub fn read_spectra(path: &Path) -> Result<Vec<SpectrumRow>> {
    read_rows(path, SPECTRUM_COLUMNS)
}

pub fn write_posterior(path: &Path, rows: &[PosteriorRow]) -> Result<()> {
    write_rows(path, POSTERIOR_COLUMNS, rows)
}

pub fn read_posterior(path: &Path) -> Result<Vec<PosteriorRow>> {
    read_rows(path, POSTERIOR_COLUMNS)
}

pub fn write_cost(path: &Path, rows: &[CostRow]) -> Result<()> {
    write_rows(path, COST_COLUMNS, rows)
}

pub fn read_cost(path: &Path) -> Result<Vec<CostRow>> {
    read_rows(path, COST_COLUMNS)
}

pub fn write_convergence_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_summary(
        path,
        CONVERGENCE_METRICS,
        rows.iter().map(|r| (r.estimator.as_str(), r.n, r.count, vec![&r.err_mean_l2, &r.err_mean_linf, &r.err_cov_fro])),
    )
}

pub fn write_posterior_summary(path: &Path, rows: &[PosteriorSummaryRow]) -> Result<()> {
    write_summary(
        path,
        POSTERIOR_METRICS,
        rows.iter().map(|r| (r.estimator.as_str(), r.n, r.count, vec![&r.map_error, &r.w2_sq])),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Run record written next to the tables: configuration echo, versions
/// and the files produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub version: String,
    pub git_revision: Option<String>,
    pub command: String,
    pub config: StudyConfig,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &StudyConfig, git_revision: Option<String>) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").into(),
            git_revision,
            command: command.into(),
            config: config.clone(),
            files: Vec::new(),
        }
    }
}

/// Coordinates of the degrees of freedom of `space`: vertices for nodal
/// spaces, centroids for cellwise constants.
pub fn dof_coordinates(mesh: &Mesh, space: Space) -> Vec<[f64; 2]> {
    match space {
        Space::P1 => mesh.vertices.clone(),
        Space::P0 => (0..mesh.num_triangles()).map(|t| mesh.centroid(t)).collect(),
        Space::Boundary(l) => mesh.boundary_nodes(l).into_iter().map(|v| mesh.vertices[v]).collect(),
    }
}

/// A posterior field with marginal standard deviations, for band and
/// heat-map figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldExport {
    pub space: Space,
    pub coordinates: Vec<[f64; 2]>,
    pub map: Vec<f64>,
    pub std: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// Posterior draws.
    pub samples: Vec<Vec<f64>>,
}

pub const FIELD_KEYS: &[&str] = &["space", "coordinates", "map", "std", "truth", "samples"];

impl FieldExport {
    pub fn new(mesh: &Mesh, space: Space, post: &LaplacePosterior, truth: Option<&DVector<f64>>, samples: Vec<Vec<f64>>) -> Self {
        FieldExport {
            space,
            coordinates: dof_coordinates(mesh, space),
            map: post.map.iter().copied().collect(),
            std: post.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
            truth: truth.map(|t| t.iter().copied().collect()),
            samples,
        }
    }
}

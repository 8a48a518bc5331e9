//! Gaussian priors with elliptic-operator precision.
//!
//! For an operator `A = gamma M + kappa K_Theta` two discretisations of the
//! squared elliptic precision are supported, see [`PrecisionForm`].

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fem::{assemble_mass, assemble_stiffness, Anisotropy, Mesh, Space};
use crate::linalg::{
    csr_mul_vec, sym_eigen, symmetrize, BandBuilder, BandCholesky, BandOrdering,
};
use crate::rng::{self, Stream};

/// How mass and operator combine into the prior precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionForm {
    /// Precision `A M^{-1} A`, covariance `A^{-1} M A^{-1}`: the L2 norm of
    /// the operator applied to the field. Mesh-independent variances.
    #[default]
    L2,
    /// Precision `A M A`, covariance `A^{-1} M^{-1} A^{-1}`.
    Literal,
}

/// Scalar parameters of one prior block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub mean: f64,
    pub gamma: f64,
    pub kappa: f64,
    #[serde(default = "Anisotropy::identity")]
    pub theta: Anisotropy,
    /// Samples with any coefficient at or below this value are redrawn.
    #[serde(default)]
    pub lower_bound: Option<f64>,
}

const STALL_WINDOW: usize = 1000;

/// Gaussian measure on the coefficients of one function space.
#[derive(Debug)]
pub struct GaussianBlock {
    pub space: Option<Space>,
    pub mean: DVector<f64>,
    pub operator: CsrMatrix<f64>,
    pub mass: CsrMatrix<f64>,
    pub form: PrecisionForm,
    pub lower_bound: Option<f64>,
    op_chol: BandCholesky,
    mass_chol: BandCholesky,
    dense_cov: OnceLock<DMatrix<f64>>,
}

fn band_from_csr(a: &CsrMatrix<f64>, ordering: &Arc<BandOrdering>) -> BandBuilder {
    let mut b = BandBuilder::new(ordering);
    for (i, j, &v) in a.triplet_iter() {
        b.add(i, j, v);
    }
    b
}

fn csr_adjacency(a: &CsrMatrix<f64>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); a.nrows()];
    for (i, j, _) in a.triplet_iter() {
        if i != j {
            adj[i].push(j);
        }
    }
    adj
}

impl GaussianBlock {
    pub fn new(mesh: &Mesh, space: Space, params: &PriorParams, form: PrecisionForm) -> Result<Self> {
        let a = assemble_stiffness(mesh, space, params.gamma, params.kappa, &params.theta)?;
        let m = assemble_mass(mesh, space);
        let n = space.dim(mesh);
        let ord = Arc::new(space.ordering(mesh));
        let mut blk = Self::with_ordering(DVector::from_element(n, params.mean), a, m, ord, form)?;
        blk.space = Some(space);
        blk.lower_bound = params.lower_bound;
        if let Some(lb) = params.lower_bound {
            if params.mean <= lb {
                return Err(Error::InvalidArgument(format!(
                    "prior mean {} violates lower bound {lb}",
                    params.mean
                )));
            }
        }
        Ok(blk)
    }

    /// Block from explicit SPD operator and mass matrices.
    pub fn from_matrices(
        mean: DVector<f64>,
        operator: CsrMatrix<f64>,
        mass: CsrMatrix<f64>,
        form: PrecisionForm,
    ) -> Result<Self> {
        let mut adj = csr_adjacency(&operator);
        for (a, b) in adj.iter_mut().zip(csr_adjacency(&mass)) {
            a.extend(b);
        }
        let ord = Arc::new(BandOrdering::rcm(&adj));
        Self::with_ordering(mean, operator, mass, ord, form)
    }

    fn with_ordering(
        mean: DVector<f64>,
        operator: CsrMatrix<f64>,
        mass: CsrMatrix<f64>,
        ord: Arc<BandOrdering>,
        form: PrecisionForm,
    ) -> Result<Self> {
        let n = mean.len();
        check_dim("prior operator rows", operator.nrows(), n)?;
        check_dim("prior mass rows", mass.nrows(), n)?;
        let op_chol = band_from_csr(&operator, &ord).factor_cholesky()?;
        let mass_chol = band_from_csr(&mass, &ord).factor_cholesky()?;
        Ok(Self {
            space: None,
            mean,
            operator,
            mass,
            form,
            lower_bound: None,
            op_chol,
            mass_chol,
            dense_cov: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_covariance(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = self.op_chol.solve(x);
        let y = match self.form {
            PrecisionForm::L2 => csr_mul_vec(&self.mass, &y),
            PrecisionForm::Literal => self.mass_chol.solve(&y),
        };
        self.op_chol.solve(&y)
    }

    pub fn apply_precision(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = csr_mul_vec(&self.operator, x);
        let y = match self.form {
            PrecisionForm::L2 => self.mass_chol.solve(&y),
            PrecisionForm::Literal => csr_mul_vec(&self.mass, &y),
        };
        csr_mul_vec(&self.operator, &y)
    }

    /// Unconstrained draw `mean + A^{-1} w` with `cov(w)` the middle factor.
    pub fn draw(&self, rng: &mut Stream) -> DVector<f64> {
        let xi = rng::standard_normal(rng, self.dim());
        let w = match self.form {
            PrecisionForm::L2 => self.mass_chol.mul_factor(&xi),
            PrecisionForm::Literal => self.mass_chol.solve_factor_transpose(&xi),
        };
        &self.mean + self.op_chol.solve(&w)
    }

    fn admissible(&self, z: &DVector<f64>) -> bool {
        match self.lower_bound {
            Some(lb) => z.iter().all(|&v| v > lb),
            None => true,
        }
    }

    /// Dense covariance, computed once by operator solves.
    pub fn dense_covariance(&self) -> &DMatrix<f64> {
        self.dense_cov.get_or_init(|| {
            let n = self.dim();
            let mut c = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                c.set_column(j, &self.apply_covariance(&e));
            }
            symmetrize(&c)
        })
    }
}

/// Truncated factor `C` with `C C^T ~ Gamma`; columns are `sqrt(lambda) v`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub columns: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Largest per-block fraction of the trace discarded by truncation.
    pub truncated_trace_fraction: f64,
}

impl CovarianceFactor {
    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }
}

/// Product of independent Gaussian blocks over a concatenated coefficient
/// vector.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    blocks: Vec<Arc<GaussianBlock>>,
    offsets: Vec<usize>,
}

impl GaussianPrior {
    pub fn single(block: GaussianBlock) -> Self {
        Self::from_blocks(vec![Arc::new(block)])
    }

    pub fn from_blocks(blocks: Vec<Arc<GaussianBlock>>) -> Self {
        let mut offsets = vec![0];
        for b in &blocks {
            offsets.push(offsets.last().unwrap() + b.dim());
        }
        Self { blocks, offsets }
    }

    /// Independent product of priors (block diagonal covariance).
    pub fn product(priors: &[&GaussianPrior]) -> Self {
        Self::from_blocks(priors.iter().flat_map(|p| p.blocks.iter().cloned()).collect())
    }

    /// Prior over the blocks `range` only.
    pub fn marginal(&self, range: std::ops::Range<usize>) -> Self {
        Self::from_blocks(self.blocks[range].to_vec())
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &GaussianBlock {
        &self.blocks[i]
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn mean(&self) -> DVector<f64> {
        self.concat(|b| b.mean.clone())
    }

    fn concat(&self, f: impl Fn(&GaussianBlock) -> DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (i, b) in self.blocks.iter().enumerate() {
            out.rows_mut(self.offsets[i], b.dim()).copy_from(&f(b));
        }
        out
    }

    fn blockwise(
        &self,
        x: &DVector<f64>,
        f: impl Fn(&GaussianBlock, &DVector<f64>) -> DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("prior vector", x.len(), self.dim())?;
        let mut out = DVector::zeros(self.dim());
        for (i, b) in self.blocks.iter().enumerate() {
            let r = self.block_range(i);
            let xi = x.rows(r.start, r.len()).into_owned();
            out.rows_mut(r.start, r.len()).copy_from(&f(b, &xi));
        }
        Ok(out)
    }

    pub fn apply_covariance(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.blockwise(x, |b, v| b.apply_covariance(v))
    }

    pub fn apply_precision(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.blockwise(x, |b, v| b.apply_precision(v))
    }

    /// Columnwise covariance application to a matrix.
    pub fn covariance_times(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            out.set_column(j, &self.apply_covariance(&x.column(j).into_owned())?);
        }
        Ok(out)
    }

    /// `0.5 (z - z0)^T Gamma^{-1} (z - z0)`.
    pub fn neg_log_density(&self, z: &DVector<f64>) -> Result<f64> {
        let d = z - self.mean();
        Ok(0.5 * d.dot(&self.apply_precision(&d)?))
    }

    /// One draw from `rng`, redrawing blocks that violate their bounds.
    /// Returns the sample and the number of rejected block draws.
    pub fn draw(&self, rng: &mut Stream) -> Result<(DVector<f64>, usize)> {
        let mut out = DVector::zeros(self.dim());
        let mut rejected = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            let mut tries = 0;
            let s = loop {
                let s = b.draw(rng);
                tries += 1;
                if b.admissible(&s) {
                    break s;
                }
                rejected += 1;
                if tries >= STALL_WINDOW {
                    return Err(Error::SamplingStall(format!(
                        "block {i}: {tries} consecutive draws violated the lower bound"
                    )));
                }
            };
            out.rows_mut(self.offsets[i], b.dim()).copy_from(&s);
        }
        Ok((out, rejected))
    }

    /// Sample `index` of the stream seeded by `seed`.
    pub fn sample_at(&self, seed: u64, index: u64) -> Result<DVector<f64>> {
        self.draw(&mut rng::stream(seed, index)).map(|(s, _)| s)
    }

    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<DVector<f64>>> {
        (0..count as u64).map(|k| self.sample_at(seed, k)).collect()
    }

    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut c = DMatrix::zeros(n, n);
        for (i, b) in self.blocks.iter().enumerate() {
            let r = self.block_range(i);
            c.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(b.dense_covariance());
        }
        c
    }

    /// Eigenvector factor of the covariance truncated so that each block
    /// discards at most `trace_tol` of its trace, capped at `max_rank`
    /// columns in total. Columns are sorted by eigenvalue.
    pub fn covariance_factor(&self, trace_tol: f64, max_rank: Option<usize>) -> Result<CovarianceFactor> {
        if !(0.0..1.0).contains(&trace_tol) {
            return Err(Error::InvalidArgument(format!("trace tolerance {trace_tol} not in [0,1)")));
        }
        let mut cols: Vec<(f64, usize, DVector<f64>)> = Vec::new();
        let mut worst: f64 = 0.0;
        for (i, b) in self.blocks.iter().enumerate() {
            let e = sym_eigen(b.dense_covariance())?;
            let vals: Vec<f64> = e.values.iter().map(|&v| v.max(0.0)).collect();
            let total: f64 = vals.iter().sum();
            let mut kept = 0.0;
            let mut k = 0;
            while k < vals.len() && (total - kept) > trace_tol * total {
                kept += vals[k];
                k += 1;
            }
            worst = worst.max((total - kept) / total);
            for (j, &lam) in vals.iter().enumerate().take(k) {
                let mut c = DVector::zeros(self.dim());
                c.rows_mut(self.offsets[i], b.dim())
                    .copy_from(&(e.vectors.column(j) * lam.sqrt()));
                cols.push((lam, i, c));
            }
        }
        cols.sort_by(|a, b| b.0.total_cmp(&a.0));
        if let Some(r) = max_rank {
            if r < cols.len() {
                cols.truncate(r);
                // recompute the discarded fraction per block
                worst = 0.0;
                for (i, b) in self.blocks.iter().enumerate() {
                    let total: f64 = (0..b.dim()).map(|k| b.dense_covariance()[(k, k)]).sum();
                    let kept: f64 = cols.iter().filter(|c| c.1 == i).map(|c| c.0).sum();
                    worst = worst.max((total - kept).max(0.0) / total);
                }
            }
        }
        let eigenvalues = cols.iter().map(|c| c.0).collect();
        let columns = if cols.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            DMatrix::from_columns(&cols.iter().map(|c| c.2.clone()).collect::<Vec<_>>())
        };
        Ok(CovarianceFactor { columns, eigenvalues, truncated_trace_fraction: worst })
    }
}

//! Linear algebra kernels: banded LU/Cholesky for PDE and prior operators,
//! bandwidth-reducing orderings, sparse helpers and dense symmetric kernels.

mod banded;
mod dense;
mod ordering;
mod sparse;

pub use banded::{BandBuilder, BandCholesky, BandLu, BandMatrix};
pub use dense::{
    cholesky_lower, mat_sqrt_psd, spd_inverse, sym_eigen, sym_eigenvalues, symmetrize, SymEigen,
};
pub use ordering::BandOrdering;
pub use sparse::{csr_from_triplets, csr_mul_vec, csr_to_dense, Triplets};

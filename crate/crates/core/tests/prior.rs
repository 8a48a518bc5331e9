use bae_core::fem::{assemble_mass, assemble_stiffness, build_rect_mesh, Anisotropy, BoundaryLabel, Mesh, SideLabels, Space};
use bae_core::linalg::csr_to_dense;
use bae_core::prior::{GaussianBlock, GaussianPrior, PrecisionForm, PriorParams};
use bae_core::rng;
use bae_core::{DMatrix, DVector};
use proptest::prelude::*;

fn mesh4() -> Mesh {
    use BoundaryLabel::*;
    build_rect_mesh(4, 4, 1.0, 1.0, SideLabels { bottom: D, right: N, top: N, left: D }).unwrap()
}

fn params() -> PriorParams {
    PriorParams { mean: 0.5, gamma: 2.0, kappa: 0.3, theta: Anisotropy::diag(1.0, 0.5), lower_bound: None }
}

/// Covariance from dense inverses of the assembled matrices.
fn direct_covariance(mesh: &Mesh, p: &PriorParams, form: PrecisionForm) -> DMatrix<f64> {
    let a = csr_to_dense(&assemble_stiffness(mesh, Space::P1, p.gamma, p.kappa, &p.theta).unwrap());
    let m = csr_to_dense(&assemble_mass(mesh, Space::P1));
    let precision = match form {
        PrecisionForm::L2 => &a * m.try_inverse().unwrap() * &a,
        PrecisionForm::Literal => &a * m * &a,
    };
    precision.try_inverse().unwrap()
}

fn sample_covariance(prior: &GaussianPrior, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let d = prior.dim();
    let mut mean = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for z in prior.sample(7, n).unwrap() {
        mean += &z;
        second.ger(1.0, &z, &z, 1.0);
    }
    mean /= n as f64;
    let cov = (second - &mean * mean.transpose() * n as f64) / (n - 1) as f64;
    (mean, cov)
}

#[test]
fn sampler_covariance_matches_direct_inverse() {
    let mesh = mesh4();
    for form in [PrecisionForm::L2, PrecisionForm::Literal] {
        let block = GaussianBlock::new(&mesh, Space::P1, &params(), form).unwrap();
        assert_eq!(block.dim(), 16);
        let exact = direct_covariance(&mesh, &params(), form);
        let dense = block.dense_covariance().clone();
        assert!((&dense - &exact).norm() <= 1e-9 * exact.norm(), "{form:?}");
        let prior = GaussianPrior::single(block);
        let (mean, cov) = sample_covariance(&prior, 100_000);
        let rel = (&cov - &exact).norm() / exact.norm();
        assert!(rel < 0.05, "{form:?}: {rel}");
        let se = (exact.diagonal().max() / 100_000.0).sqrt();
        assert!((mean.add_scalar(-0.5)).amax() < 5.0 * se, "{form:?}");
    }
}

#[test]
fn whitened_norm_is_chi_squared() {
    let mesh = mesh4();
    let n = 20_000;
    for form in [PrecisionForm::L2, PrecisionForm::Literal] {
        let prior = GaussianPrior::single(GaussianBlock::new(&mesh, Space::P1, &params(), form).unwrap());
        let d = prior.dim() as f64;
        let q: Vec<f64> =
            prior.sample(3, n).unwrap().iter().map(|z| 2.0 * prior.neg_log_density(z).unwrap()).collect();
        let mean = q.iter().sum::<f64>() / n as f64;
        // chi-squared with d degrees of freedom: mean d, variance 2d
        let sigma = (2.0 * d / n as f64).sqrt();
        assert!((mean - d).abs() < 3.0 * sigma, "{form:?}: {mean} vs {d}");
    }
}

#[test]
fn truncated_factor_discards_at_most_tolerance() {
    let mesh = mesh4();
    let prior = GaussianPrior::single(GaussianBlock::new(&mesh, Space::P1, &params(), PrecisionForm::L2).unwrap());
    let full = prior.dense_covariance();
    for tol in [0.0, 1e-3, 1e-1] {
        let f = prior.covariance_factor(tol, None).unwrap();
        let approx = &f.columns * f.columns.transpose();
        let dropped = (full.trace() - approx.trace()) / full.trace();
        assert!(dropped <= tol + 1e-12, "{tol}: {dropped}");
        assert!(f.truncated_trace_fraction <= tol + 1e-12);
    }
    assert_eq!(prior.covariance_factor(0.0, None).unwrap().rank(), 16);
    assert_eq!(prior.covariance_factor(0.0, Some(3)).unwrap().rank(), 3);
}

#[test]
fn product_prior_is_block_diagonal() {
    let mesh = mesh4();
    let a = GaussianPrior::single(GaussianBlock::new(&mesh, Space::P1, &params(), PrecisionForm::L2).unwrap());
    let b = GaussianPrior::single(GaussianBlock::new(&mesh, Space::P0, &params(), PrecisionForm::L2).unwrap());
    let ab = GaussianPrior::product(&[&a, &b]);
    assert_eq!(ab.dim(), 16 + 18);
    let c = ab.dense_covariance();
    assert!(c.view((0, 16), (16, 18)).amax() == 0.0);
    assert!((c.view((0, 0), (16, 16)) - a.dense_covariance()).amax() == 0.0);
    assert_eq!(ab.marginal(1..2).dim(), 18);
    let mut r = rng::stream(1, 0);
    let (z, rejected) = ab.draw(&mut r).unwrap();
    assert_eq!((z.len(), rejected), (34, 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariance_inverts_precision(x in prop::collection::vec(-3.0..3.0f64, 16), kappa in 0.05..2.0f64, literal in any::<bool>()) {
        let mesh = mesh4();
        let p = PriorParams { kappa, ..params() };
        let form = if literal { PrecisionForm::Literal } else { PrecisionForm::L2 };
        let prior = GaussianPrior::single(GaussianBlock::new(&mesh, Space::P1, &p, form).unwrap());
        let x = DVector::from_vec(x);
        let back = prior.apply_precision(&prior.apply_covariance(&x).unwrap()).unwrap();
        prop_assert!((&back - &x).norm() <= 1e-8 * x.norm().max(1.0));
        let cx = prior.covariance_times(&DMatrix::from_column_slice(16, 1, x.as_slice())).unwrap();
        prop_assert!((cx.column(0) - prior.apply_covariance(&x).unwrap()).norm() <= 1e-12 * cx.norm().max(1e-300));
    }
}

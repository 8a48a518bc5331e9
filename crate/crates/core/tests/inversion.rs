mod common;

use bae_core::estimators::{ErrorStats, Estimator};
use bae_core::inversion::{solve_bae, InverseProblem, LaplacePosterior, MapOptions, NoiseWeight, WeightMode};
use bae_core::models::{AffineMap, NoiseModel, QuadraticMap, SolveCounts};
use bae_core::spectral::RankRule;
use bae_core::taylor::PairCounts;
use bae_core::{DMatrix, DVector};
use common::{quadratic_slices, small_prior};

fn affine(p: usize, d: usize) -> AffineMap {
    AffineMap::new(DMatrix::from_fn(p, d, |i, k| ((i * d + k) as f64 * 0.7).cos()), DVector::from_element(p, 0.1)).unwrap()
}

#[test]
fn one_gauss_newton_step_solves_linear_gaussian_problems() {
    let d = 4;
    let prior = small_prior(d);
    let f = affine(3, d);
    let noise = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.09, 0.01]));
    let data = DVector::from_vec(vec![0.5, -0.3, 1.2]);
    let eta = DVector::from_vec(vec![0.01, 0.0, -0.02]);
    let prob = InverseProblem::new(&f, &prior, data.clone(), eta.clone(), NoiseWeight::dense(noise.clone()).unwrap()).unwrap();
    let (m, trace) = prob.map_estimate(&prior.mean(), &MapOptions::default()).unwrap();

    // normal equations
    let gp = prior.dense_covariance();
    let prec = gp.clone().cholesky().unwrap().inverse();
    let w = noise.clone().cholesky().unwrap().inverse();
    let h = f.jacobian.transpose() * &w * &f.jacobian + &prec;
    let rhs = f.jacobian.transpose() * &w * (&data - &f.offset - &eta) + &prec * prior.mean();
    let exact = h.clone().cholesky().unwrap().solve(&rhs);
    assert!((&m - &exact).norm() <= 1e-8 * exact.norm());
    assert!(trace.converged);
    assert_eq!(trace.iterations(), 1);

    let cov = prob.laplace_covariance(&m, &mut SolveCounts::default()).unwrap();
    let exact_cov = h.cholesky().unwrap().inverse();
    assert!((&cov - &exact_cov).norm() <= 1e-10 * exact_cov.norm());
    for i in 0..d {
        assert!(cov[(i, i)] <= gp[(i, i)] + 1e-10);
    }
}

#[test]
fn data_at_prior_mean_returns_prior_mean() {
    let prior = small_prior(3);
    let f = affine(2, 3);
    let data = &f.jacobian * prior.mean() + &f.offset;
    let prob = InverseProblem::new(&f, &prior, data, DVector::zeros(2), NoiseWeight::dense(DMatrix::identity(2, 2) * 0.01).unwrap()).unwrap();
    let (m, _) = prob.map_estimate(&prior.mean(), &MapOptions::default()).unwrap();
    assert!((m - prior.mean()).amax() < 1e-14);
}

#[test]
fn insensitive_or_uninformative_data_recovers_prior() {
    let prior = small_prior(3);
    let zero = AffineMap::new(DMatrix::zeros(2, 3), DVector::zeros(2)).unwrap();
    let prob = InverseProblem::new(&zero, &prior, DVector::zeros(2), DVector::zeros(2), NoiseWeight::dense(DMatrix::identity(2, 2)).unwrap()).unwrap();
    let cov = prob.laplace_covariance(&prior.mean(), &mut SolveCounts::default()).unwrap();
    assert!((&cov - prior.dense_covariance()).amax() < 1e-15);

    let f = affine(2, 3);
    let mut last = f64::INFINITY;
    for delta in [1.0, 1e2, 1e4, 1e6] {
        let prob = InverseProblem::new(&f, &prior, DVector::zeros(2), DVector::zeros(2), NoiseWeight::dense(DMatrix::identity(2, 2) * (delta * delta)).unwrap()).unwrap();
        let cov = prob.laplace_covariance(&prior.mean(), &mut SolveCounts::default()).unwrap();
        let gap = (&cov - prior.dense_covariance()).norm();
        assert!(gap < last);
        last = gap;
    }
    assert!(last < 1e-10);
}

#[test]
fn scalar_posterior_variance() {
    let prior = small_prior(1);
    let gm = prior.dense_covariance()[(0, 0)];
    let (fd, ge) = (1.7, 0.3);
    let f = AffineMap::new(DMatrix::from_element(1, 1, fd), DVector::zeros(1)).unwrap();
    let prob = InverseProblem::new(&f, &prior, DVector::from_element(1, 0.4), DVector::zeros(1), NoiseWeight::dense(DMatrix::from_element(1, 1, ge)).unwrap()).unwrap();
    let cov = prob.laplace_covariance(&prior.mean(), &mut SolveCounts::default()).unwrap();
    let exact = 1.0 / (fd * fd / ge + 1.0 / gm);
    assert!((cov[(0, 0)] - exact).abs() < 1e-14 * exact);
}

fn nonlinear() -> QuadraticMap {
    QuadraticMap::new(
        DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 0.2, 0.0, 0.3, 1.1]),
        DVector::from_vec(vec![0.1, -0.2]),
        quadratic_slices(),
    )
    .unwrap()
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    let prior = small_prior(3);
    let f = nonlinear();
    let prob = InverseProblem::new(&f, &prior, DVector::from_vec(vec![0.3, 1.0]), DVector::from_vec(vec![0.05, 0.0]), NoiseWeight::dense(DMatrix::identity(2, 2) * 0.05).unwrap()).unwrap();
    for k in 0..5 {
        let m = DVector::from_fn(3, |i, _| ((k * 3 + i) as f64 * 1.3).sin());
        let g = prob.gradient(&m, &mut SolveCounts::default()).unwrap();
        let h = 1e-6;
        let fd = DVector::from_fn(3, |i, _| {
            let mut e = DVector::zeros(3);
            e[i] = h;
            (prob.objective(&(&m + &e)).unwrap() - prob.objective(&(&m - &e)).unwrap()) / (2.0 * h)
        });
        assert!((&g - &fd).norm() <= 1e-5 * g.norm(), "point {k}");
    }
}

#[test]
fn accepted_iterates_decrease_the_objective_and_are_reproducible() {
    let prior = small_prior(3);
    let f = nonlinear();
    let prob = InverseProblem::new(&f, &prior, DVector::from_vec(vec![2.0, -1.5]), DVector::zeros(2), NoiseWeight::dense(DMatrix::identity(2, 2) * 0.01).unwrap()).unwrap();
    let (m, trace) = prob.map_estimate(&prior.mean(), &MapOptions::default()).unwrap();
    assert!(trace.converged);
    assert!(trace.iterations() > 1);
    assert!(trace.objective.windows(2).all(|w| w[1] < w[0] || w[1] == w[0] && w[0] == trace.objective[trace.objective.len() - 1]));
    let g = prob.gradient(&m, &mut SolveCounts::default()).unwrap();
    assert!(g.norm() <= 1e-6 * trace.gradient_norm[0]);
    let (m2, _) = prob.map_estimate(&prior.mean(), &MapOptions::default()).unwrap();
    assert_eq!(m, m2);
}

#[test]
fn iteration_limit_is_reported() {
    let prior = small_prior(3);
    let f = nonlinear();
    let prob = InverseProblem::new(&f, &prior, DVector::from_vec(vec![2.0, -1.5]), DVector::zeros(2), NoiseWeight::dense(DMatrix::identity(2, 2) * 0.01).unwrap()).unwrap();
    let opts = MapOptions { max_iter: 1, gradient_tol: 1e-14, ..MapOptions::default() };
    assert!(matches!(prob.map_estimate(&prior.mean(), &opts), Err(bae_core::Error::Optimization { .. })));
    assert!(prob.map_estimate(&DVector::from_element(3, f64::NAN), &MapOptions::default()).is_err());
}

fn stats(mean: DVector<f64>, cov: DMatrix<f64>) -> ErrorStats {
    ErrorStats { estimator: Estimator::Mc, n: 100, seed: 1, mean, covariance: cov, cross_covariance: None, cost: PairCounts::default() }
}

#[test]
fn error_models_enter_the_posterior() {
    let prior = small_prior(3);
    let f = nonlinear();
    let noise = NoiseModel::white(2, 0.1).unwrap();
    let data = DVector::from_vec(vec![0.8, -0.4]);
    let opts = MapOptions::default();
    let ignore = solve_bae(&f, &prior, &data, None, &noise, WeightMode::Dense, &opts).unwrap();
    assert_eq!(ignore.estimator, None);
    let zero = stats(DVector::zeros(2), DMatrix::zeros(2, 2));
    let with_zero = solve_bae(&f, &prior, &data, Some(&zero), &noise, WeightMode::Dense, &opts).unwrap();
    assert!((&with_zero.map - &ignore.map).amax() < 1e-12);

    let st = stats(DVector::from_vec(vec![0.1, 0.05]), DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.01]));
    let dense = solve_bae(&f, &prior, &data, Some(&st), &noise, WeightMode::Dense, &opts).unwrap();
    let low = solve_bae(&f, &prior, &data, Some(&st), &noise, WeightMode::LowRank(RankRule::Full), &opts).unwrap();
    assert!((&dense.map - &low.map).amax() < 1e-9);
    assert!((&dense.covariance - &low.covariance).amax() < 1e-9);
    assert_eq!(dense.estimator, Some(Estimator::Mc));
    assert_eq!(dense.n, 100);
    // larger total error widens the posterior
    for i in 0..3 {
        assert!(dense.covariance[(i, i)] >= ignore.covariance[(i, i)] - 1e-12);
    }

    let json = serde_json::to_string(&dense).unwrap();
    let back: LaplacePosterior = serde_json::from_str(&json).unwrap();
    assert_eq!(back, dense);
}

mod common;

use bae_core::fem::{build_rect_mesh, BoundaryLabel, SideLabels};
use bae_core::models::{AffineMap, PtoMap, QuadraticMap, RobinModel, Secondary, SolveCounts};
use bae_core::prior::GaussianPrior;
use bae_core::rng;
use bae_core::taylor::{linear_moments, quadratic_moments, ErrorTaylor, PairCounts, TaylorOrder};
use bae_core::{DMatrix, DVector};
use common::{quadratic_slices, rel_err, rel_err_v, small_prior};
use proptest::prelude::*;

fn quadratic_map() -> QuadraticMap {
    let j = DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 0.2, 0.1, 0.3, -0.4]);
    QuadraticMap::new(j, DVector::from_vec(vec![0.7, -0.1]), quadratic_slices()).unwrap()
}

fn zero_map(p: usize, d: usize) -> AffineMap {
    AffineMap::new(DMatrix::zeros(p, d), DVector::zeros(p)).unwrap()
}

/// Moments of `G(z)` for `z ~ N(mu, Gamma)` by explicit index sums over the
/// Hessian tensor and Isserlis' theorem.
fn tensor_oracle(q: &QuadraticMap, prior: &GaussianPrior) -> (DVector<f64>, DMatrix<f64>) {
    let mu = prior.mean();
    let g = prior.dense_covariance();
    let (p, d) = (q.slices.len(), mu.len());
    let t = |i: usize, a: usize, b: usize| q.slices[i][(a, b)];
    // gradient at the mean
    let grad = DMatrix::from_fn(p, d, |i, a| q.jacobian[(i, a)] + (0..d).map(|b| t(i, a, b) * mu[b]).sum::<f64>());
    let mut mean = DVector::zeros(p);
    for i in 0..p {
        let mut v = q.offset[i];
        for a in 0..d {
            v += q.jacobian[(i, a)] * mu[a];
            for b in 0..d {
                v += 0.5 * t(i, a, b) * (mu[a] * mu[b] + g[(a, b)]);
            }
        }
        mean[i] = v;
    }
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let mut v = 0.0;
            for a in 0..d {
                for b in 0..d {
                    v += grad[(i, a)] * g[(a, b)] * grad[(j, b)];
                    for c in 0..d {
                        for e in 0..d {
                            v += 0.25 * t(i, a, b) * t(j, c, e) * (g[(a, c)] * g[(b, e)] + g[(a, e)] * g[(b, c)]);
                        }
                    }
                }
            }
            cov[(i, j)] = v;
        }
    }
    (mean, cov)
}

#[test]
fn quadratic_moments_match_tensor_oracle() {
    let prior = small_prior(3);
    let q = quadratic_map();
    let f = zero_map(2, 3);
    let t = ErrorTaylor::new(&q, &f, &prior.mean()).unwrap();
    let fac = prior.covariance_factor(0.0, None).unwrap();
    let mom = quadratic_moments(&t, &prior, &fac, &mut PairCounts::default()).unwrap();
    let (mean, cov) = tensor_oracle(&q, &prior);
    assert!(rel_err_v(&mom.mean, &mean) < 1e-10);
    assert!(rel_err(&mom.covariance, &cov) < 1e-10);
    assert_eq!(mom.order, TaylorOrder::Quadratic);
}

#[test]
fn quadratic_moments_match_brute_force_sampling() {
    let prior = small_prior(3);
    let q = quadratic_map();
    let f = zero_map(2, 3);
    let t = ErrorTaylor::new(&q, &f, &prior.mean()).unwrap();
    let fac = prior.covariance_factor(0.0, None).unwrap();
    let mom = quadratic_moments(&t, &prior, &fac, &mut PairCounts::default()).unwrap();
    let n = 200_000;
    let mut c = SolveCounts::default();
    let values: Vec<DVector<f64>> =
        prior.sample(17, n).unwrap().iter().map(|z| q.evaluate(z, &mut c).unwrap()).collect();
    let mean = values.iter().fold(DVector::zeros(2), |a, v| a + v) / n as f64;
    let cov = values.iter().fold(DMatrix::zeros(2, 2), |a, v| a + (v - &mean) * (v - &mean).transpose()) / (n - 1) as f64;
    for i in 0..2 {
        let se = (mom.covariance[(i, i)] / n as f64).sqrt();
        assert!((mean[i] - mom.mean[i]).abs() < 3.0 * se, "component {i}: {} vs {}", mean[i], mom.mean[i]);
    }
    assert!(rel_err(&cov, &mom.covariance) < 0.02);
}

#[test]
fn expansion_of_a_quadratic_map_is_exact() {
    let prior = small_prior(3);
    let q = quadratic_map();
    let f = zero_map(2, 3);
    let t = ErrorTaylor::new(&q, &f, &prior.mean()).unwrap();
    let mut c = SolveCounts::default();
    for z in prior.sample(3, 5).unwrap() {
        let v = t.evaluate(&z, TaylorOrder::Quadratic).unwrap();
        let exact = q.evaluate(&z, &mut c).unwrap();
        assert!((v.quadratic.unwrap() - &exact).amax() < 1e-12);
        let dz = &z - prior.mean();
        let grad = DMatrix::from_fn(2, 3, |i, a| (&q.jacobian.row(i).transpose() + &q.slices[i] * prior.mean())[a]);
        assert!((v.linear - (t.value() + grad * dz)).amax() < 1e-12);
    }
}

#[test]
fn truncated_factor_converges_to_full_moments() {
    let prior = small_prior(6);
    let j = DMatrix::from_fn(2, 6, |i, k| ((i + 1) * (k + 2)) as f64 * 0.05);
    let slices = (0..2).map(|i| DMatrix::from_fn(6, 6, |a, b| 1.0 / (1.0 + (a + b + i) as f64))).collect();
    let q = QuadraticMap::new(j, DVector::zeros(2), slices).unwrap();
    let f = zero_map(2, 6);
    let t = ErrorTaylor::new(&q, &f, &prior.mean()).unwrap();
    let full = quadratic_moments(&t, &prior, &prior.covariance_factor(0.0, None).unwrap(), &mut PairCounts::default())
        .unwrap();
    let mut last = f64::INFINITY;
    for rank in 1..=6 {
        let fac = prior.covariance_factor(0.0, Some(rank)).unwrap();
        let m = quadratic_moments(&t, &prior, &fac, &mut PairCounts::default()).unwrap();
        let err = rel_err_v(&m.mean, &full.mean);
        assert!(err <= last + 1e-14, "rank {rank}: {err} > {last}");
        last = err;
    }
    assert!(last < 1e-12);
}

fn robin_pair() -> (RobinModel, RobinModel, DVector<f64>) {
    use BoundaryLabel::*;
    let mesh = build_rect_mesh(9, 4, 1.0, 0.25, SideLabels { bottom: I, right: A, top: A, left: A }).unwrap();
    let pts = vec![[0.2, 0.1], [0.5, 0.2], [0.8, 0.05]];
    let g = RobinModel::new(&mesh, &pts, 1.0, Secondary::Free).unwrap();
    let z0 = DVector::from_element(g.param_dim(), 4.0);
    let f = g.with_fixed_beta(DVector::from_element(g.beta_dim(), 3.0)).unwrap();
    (g, f, z0)
}

#[test]
fn taylor_remainders_shrink_at_their_orders() {
    let (g, f, z0) = robin_pair();
    let t = ErrorTaylor::new(&g, &f, &z0).unwrap();
    let dz = rng::standard_normal(&mut rng::stream(4, 0), z0.len());
    let m = f.param_dim();
    let remainders = |h: f64| {
        let z = &z0 + &dz * h;
        let mut c = SolveCounts::default();
        let eps = g.evaluate(&z, &mut c).unwrap() - f.evaluate(&z.rows(0, m).into_owned(), &mut c).unwrap();
        let v = t.evaluate(&z, TaylorOrder::Quadratic).unwrap();
        ((&eps - v.linear).norm(), (&eps - v.quadratic.unwrap()).norm())
    };
    let (l1, q1) = remainders(0.2);
    let (l2, q2) = remainders(0.1);
    let lin_rate = (l1 / l2).log2();
    let quad_rate = (q1 / q2).log2();
    assert!((1.7..2.3).contains(&lin_rate), "linear remainder rate {lin_rate}");
    assert!((2.7..3.3).contains(&quad_rate), "quadratic remainder rate {quad_rate}");
}

#[test]
fn evaluation_cost_splits_by_order() {
    let (g, f, z0) = robin_pair();
    let t = ErrorTaylor::new(&g, &f, &z0).unwrap();
    let z = &z0 + DVector::from_element(z0.len(), 0.1);
    let v = t.evaluate(&z, TaylorOrder::Quadratic).unwrap();
    assert_eq!(v.linear_cost.accurate.sensitivity, 1);
    assert_eq!(v.linear_cost.surrogate.sensitivity, 1);
    assert_eq!(v.quadratic_cost.accurate.sensitivity, 1);
    assert_eq!(v.linear_cost.accurate.forward, 0);
    let v = t.evaluate(&z, TaylorOrder::Linear).unwrap();
    assert!(v.quadratic.is_none());
    assert_eq!(v.quadratic_cost, PairCounts::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quadratic_covariance_dominates_linear(seed in 0u64..10_000) {
        let mut r = rng::stream(seed, 0);
        let d = 4;
        let prior = small_prior(d);
        let j = DMatrix::from_iterator(3, d, rng::standard_normal(&mut r, 3 * d).iter().copied());
        let slices = (0..3)
            .map(|_| {
                let a = DMatrix::from_iterator(d, d, rng::standard_normal(&mut r, d * d).iter().copied());
                (&a + a.transpose()) * 0.5
            })
            .collect();
        let q = QuadraticMap::new(j, DVector::zeros(3), slices).unwrap();
        let f = zero_map(3, d);
        let t = ErrorTaylor::new(&q, &f, &prior.mean()).unwrap();
        let lin = linear_moments(&t, &prior, &mut PairCounts::default()).unwrap();
        let quad =
            quadratic_moments(&t, &prior, &prior.covariance_factor(0.0, None).unwrap(), &mut PairCounts::default()).unwrap();
        let diff = &quad.covariance - &lin.covariance;
        let min = diff.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10 * diff.norm().max(1.0), "min eigenvalue {min}");
        prop_assert!((&quad.cross_covariance - &lin.cross_covariance).amax() == 0.0);
    }
}

#[test]
fn accurate_only_expansion_leaves_surrogate_exact() {
    use bae_core::estimators::{cv_stats, SamplingPlan};
    use bae_core::taylor::Expansion;
    let d = 3;
    let prior = small_prior(d);
    let jg = DMatrix::from_fn(2, d, |i, k| (i + 2 * k) as f64 * 0.1 - 0.3);
    let g = AffineMap::new(jg.clone(), DVector::from_vec(vec![1.0, -2.0])).unwrap();
    let f = quadratic_map();
    let t = ErrorTaylor::with_expansion(&g, &f, &prior.mean(), Expansion::AccurateOnly).unwrap();
    assert_eq!(t.expansion(), Expansion::AccurateOnly);
    let mut counts = PairCounts::default();
    assert!((t.jacobian_matrix(&mut counts).unwrap() - &jg).amax() < 1e-14);
    assert_eq!(counts.surrogate, SolveCounts::default());
    let mom = linear_moments(&t, &prior, &mut counts).unwrap();
    let plan = SamplingPlan { accurate: &g, surrogate: &f, prior: &prior, taylor: Some((&t, TaylorOrder::Linear)), keep_params: false };
    let samples = plan.draw(8, 0, 50).unwrap();
    let s = cv_stats(&samples, &mom, None, 8).unwrap();
    // the affine G is its own control, leaving plain Monte Carlo on F
    let mut c = SolveCounts::default();
    let f_mean = prior.sample(8, 50).unwrap().iter().map(|z| f.evaluate(z, &mut c).unwrap()).fold(DVector::zeros(2), |a, v| a + v)
        / 50.0;
    let expect = &jg * prior.mean() + &g.offset - f_mean;
    assert!(rel_err_v(&s.mean, &expect) < 1e-12);
}

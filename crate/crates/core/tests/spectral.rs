use bae_core::spectral::{
    generalized_eig, leading_change, spectrum_monitor, LowRankNoiseInverse, RankRule, SpectrumEntry,
};
use bae_core::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(p: usize, entries: &[f64], shift: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(p, p, |i, j| entries[(i * p + j) % entries.len()]);
    &b * b.transpose() + DMatrix::identity(p, p) * shift
}

#[test]
fn hand_computed_pair() {
    let c = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
    let n = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
    let e = generalized_eig(&c, &n).unwrap();
    assert!((e.values[0] - 2.0).abs() < 1e-14);
    assert!((e.values[1] - 1.0).abs() < 1e-14);
}

#[test]
fn proportional_covariances_have_flat_spectrum() {
    let n = spd(5, &[0.3, -1.0, 0.2, 0.7, 1.1, -0.4], 0.5);
    let e = generalized_eig(&(&n * 3.5), &n).unwrap();
    assert!(e.values.iter().all(|v| (v - 3.5).abs() < 1e-12));
}

#[test]
fn white_noise_scales_ordinary_spectrum() {
    let c = spd(4, &[1.0, 0.5, -0.2, 0.3, 0.9], 0.0);
    let delta2 = 0.04;
    let e = generalized_eig(&c, &(DMatrix::identity(4, 4) * delta2)).unwrap();
    let ord = bae_core::linalg::sym_eigenvalues(&c).unwrap();
    for (g, o) in e.values.iter().zip(&ord) {
        assert!((g - o / delta2).abs() < 1e-10 * (o / delta2).abs().max(1.0));
    }
}

#[test]
fn non_spd_noise_is_rejected() {
    let c = DMatrix::identity(2, 2);
    let n = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
    assert!(generalized_eig(&c, &n).is_err());
    assert!(LowRankNoiseInverse::new(&c, &DMatrix::identity(3, 3), RankRule::Full).is_err());
}

#[test]
fn zero_rank_is_the_noise_inverse() {
    let n = spd(3, &[0.2, 1.0, -0.5, 0.1], 1.0);
    let c = spd(3, &[1.0, 2.0, 0.5], 0.0);
    let s = LowRankNoiseInverse::new(&c, &n, RankRule::Fixed(0)).unwrap();
    let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let direct = n.clone().cholesky().unwrap().solve(&x);
    assert!((s.apply(&x) - direct).amax() < 1e-12);
}

#[test]
fn threshold_rank_error_is_within_truncation_bound() {
    let p = 12;
    let n = DMatrix::identity(p, p) * 0.01;
    // decaying spectrum
    let q = bae_core::linalg::sym_eigen(&spd(p, &[0.3, -0.8, 0.5, 1.2, -0.1, 0.6, 0.9], 1.0)).unwrap().vectors;
    let mut c = DMatrix::zeros(p, p);
    for k in 0..p {
        let v = q.column(k);
        c += &v * v.transpose() * (0.5f64.powi(k as i32));
    }
    let s = LowRankNoiseInverse::new(&c, &n, RankRule::Threshold(0.1)).unwrap();
    assert!(s.rank() > 0 && s.rank() < p);
    let exact = (&n + &c).cholesky().unwrap().inverse();
    // the discarded part in whitened coordinates is bounded in norm by the sum
    let l = n.clone().cholesky().unwrap().l();
    let err = l.transpose() * (s.to_dense() - &exact) * &l;
    assert!(err.norm() <= s.truncation_bound * (1.0 + 1e-9));
}

#[test]
fn monitor_trivial_cases() {
    let e = |n, v: Vec<f64>| SpectrumEntry { n, eigenvalues: v };
    let r = spectrum_monitor(vec![e(2, vec![5.0, 1.0, 0.01]), e(5, vec![5.0, 1.0, 0.01])], 0.1, 0.05).unwrap();
    assert!(r.stabilized);
    assert_eq!(r.stabilized_from, Some(2));
    let r = spectrum_monitor(vec![e(2, vec![0.05, 0.01]), e(5, vec![0.09, 0.0])], 0.1, 0.05).unwrap();
    assert!(r.stabilized);
    let r = spectrum_monitor(
        vec![e(2, vec![1.0]), e(5, vec![3.0]), e(10, vec![3.05]), e(20, vec![3.0])],
        0.1,
        0.05,
    )
    .unwrap();
    assert!(r.stabilized);
    assert_eq!(r.stabilized_from, Some(5));
    let r = spectrum_monitor(vec![e(2, vec![1.0]), e(5, vec![2.0])], 0.1, 0.05).unwrap();
    assert!(!r.stabilized);
    assert_eq!(r.stabilized_from, None);
    assert!(spectrum_monitor(vec![e(2, vec![1.0])], 0.1, 0.05).is_err());
    // an eigenvalue crossing the threshold counts as a change
    assert!(leading_change(&[1.0, 0.5], &[1.0], 0.1) > 0.9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn full_rank_smw_is_exact(
        p in 1usize..9,
        a in prop::collection::vec(-1.0f64..1.0, 12),
        b in prop::collection::vec(-1.0f64..1.0, 12),
        x in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let c = spd(p, &a, 0.0);
        let n = spd(p, &b, 0.1);
        let s = LowRankNoiseInverse::new(&c, &n, RankRule::Full).unwrap();
        let x = DVector::from_column_slice(&x[..p]);
        let exact = (&n + &c).cholesky().unwrap().inverse();
        let direct = &exact * &x;
        let tol = 1e-10 * x.norm() * exact.norm();
        prop_assert!((s.apply(&x) - direct).amax() <= tol);
        prop_assert!((s.to_dense() - &exact).norm() <= 1e-10 * exact.norm());
        let gram = s.vectors.transpose() * &n * &s.vectors;
        prop_assert!((gram - DMatrix::identity(p, p)).amax() < 1e-9);
    }

    #[test]
    fn truncation_error_is_monotone(
        a in prop::collection::vec(-1.0f64..1.0, 12),
        b in prop::collection::vec(-1.0f64..1.0, 12),
    ) {
        let p = 6;
        let c = spd(p, &a, 0.0);
        let n = spd(p, &b, 0.1);
        let exact = (&n + &c).cholesky().unwrap().inverse();
        let mut last = f64::INFINITY;
        for r in 0..=p {
            let s = LowRankNoiseInverse::new(&c, &n, RankRule::Fixed(r)).unwrap();
            // error measured in the noise-whitened norm, where the omitted terms are orthogonal
            let l = n.clone().cholesky().unwrap().l();
            let err = (l.transpose() * (s.to_dense() - &exact) * &l).norm();
            prop_assert!(err <= last * (1.0 + 1e-9) + 1e-12);
            last = err;
        }
    }

    #[test]
    fn spectrum_is_invariant_under_congruence(
        a in prop::collection::vec(-1.0f64..1.0, 12),
        b in prop::collection::vec(-1.0f64..1.0, 12),
        t in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let p = 4;
        let c = spd(p, &a, 0.0);
        let n = spd(p, &b, 0.2);
        let s = DMatrix::from_fn(p, p, |i, j| t[i * p + j]) + DMatrix::identity(p, p) * 3.0;
        let e1 = generalized_eig(&c, &n).unwrap();
        let e2 = generalized_eig(&(&s * &c * s.transpose()), &(&s * &n * s.transpose())).unwrap();
        let scale = e1.values.amax().max(1.0);
        prop_assert!((e1.values - e2.values).amax() < 1e-9 * scale);
    }
}

use bae_core::estimators::Estimator;
use bae_core::inversion::{LaplacePosterior, OptimizerTrace};
use bae_core::linalg::csr_from_triplets;
use bae_core::studies::io;
use bae_core::studies::metrics::{m_norm, mean};
use bae_core::studies::*;
use bae_core::{DMatrix, DVector, Error};
use proptest::prelude::*;

fn posterior(map: DVector<f64>, covariance: DMatrix<f64>) -> LaplacePosterior {
    LaplacePosterior { map, covariance, trace: OptimizerTrace::default(), estimator: None, n: 0 }
}

fn diag_mass(w: &[f64]) -> nalgebra_sparse::CsrMatrix<f64> {
    csr_from_triplets(w.len(), w.len(), &w.iter().enumerate().map(|(i, &v)| (i, i, v)).collect::<Vec<_>>())
}

fn spd(seed: u64, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |i, j| (((i * 31 + j * 17) as u64 * (seed + 3)) % 23) as f64 / 23.0 - 0.45);
    &b * b.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Small Robin configuration for fast end-to-end runs.
fn tiny_robin() -> StudyConfig {
    let mut c = StudyConfig::example1();
    c.name = "tiny".into();
    c.mesh = MeshConfig { nx: 11, ny: 4, lx: 1.0, ly: 0.25 };
    c.observation_points.truncate(8);
    c.n_grid = vec![2, 5, 10];
    c.seeds = 3;
    c.reference_n = 200;
    c.data_realizations = 2;
    c.posterior_n_grid = vec![2, 5];
    c.posterior_seeds = 2;
    c
}

fn tiny_semilinear() -> StudyConfig {
    let mut c = StudyConfig::example2();
    c.mesh = MeshConfig { nx: 9, ny: 9, lx: 1.0, ly: 1.0 };
    c.observation_points = (0..16).map(|k| [((k % 4) + 1) as f64 / 5.0, ((k / 4) + 1) as f64 / 5.0]).collect();
    c
}

#[test]
fn wasserstein_identical_is_zero() {
    let p = posterior(DVector::from_vec(vec![1.0, -2.0, 0.5]), spd(1, 3));
    let w = wasserstein2_sq(&p, &p, &diag_mass(&[1.0, 2.0, 0.5])).unwrap();
    assert!(w <= 1e-10, "{w}");
}

#[test]
fn wasserstein_scalar_closed_form() {
    let (a, b, s, t, m) = (0.3, -1.1, 0.7, 1.9, 2.5);
    let pa = posterior(DVector::from_element(1, a), DMatrix::from_element(1, 1, s * s));
    let pb = posterior(DVector::from_element(1, b), DMatrix::from_element(1, 1, t * t));
    let w = wasserstein2_sq(&pa, &pb, &diag_mass(&[m])).unwrap();
    let expect = (a - b) * (a - b) * m + (s - t) * (s - t);
    assert!((w - expect).abs() <= 1e-9 * expect, "{w} vs {expect}");
}

#[test]
fn wasserstein_diagonal_closed_form() {
    let lam = [0.5, 2.0, 3.5, 0.01];
    let mu = [1.5, 0.2, 3.5, 0.04];
    let ma = DVector::from_vec(vec![0.0, 1.0, -1.0, 2.0]);
    let mb = DVector::from_vec(vec![0.5, 1.0, 0.0, 2.0]);
    let w_mass = [1.0, 0.5, 2.0, 1.0];
    let pa = posterior(ma.clone(), DMatrix::from_diagonal(&DVector::from_row_slice(&lam)));
    let pb = posterior(mb.clone(), DMatrix::from_diagonal(&DVector::from_row_slice(&mu)));
    let w = wasserstein2_sq(&pa, &pb, &diag_mass(&w_mass)).unwrap();
    let mean_term: f64 = (0..4).map(|i| w_mass[i] * (ma[i] - mb[i]).powi(2)).sum();
    let cov_term: f64 = lam.iter().zip(&mu).map(|(l, m)| (l.sqrt() - m.sqrt()).powi(2)).sum();
    assert!((w - mean_term - cov_term).abs() <= 1e-9, "{w} vs {}", mean_term + cov_term);
}

#[test]
fn wasserstein_rejects_indefinite_covariance() {
    let good = posterior(DVector::zeros(2), DMatrix::identity(2, 2));
    let bad = posterior(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    let m = diag_mass(&[1.0, 1.0]);
    assert!(matches!(wasserstein2_sq(&bad, &good, &m), Err(Error::NotPositiveDefinite)));
    assert!(matches!(wasserstein2_sq(&good, &bad, &m), Err(Error::NotPositiveDefinite)));
}

fn random_posterior(n: usize) -> impl Strategy<Value = LaplacePosterior> {
    (prop::collection::vec(-2.0..2.0f64, n), prop::collection::vec(-1.0..1.0f64, n * n)).prop_map(move |(m, b)| {
        let b = DMatrix::from_vec(n, n, b);
        posterior(DVector::from_vec(m), &b * b.transpose() + DMatrix::identity(n, n) * 0.05)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_symmetric(a in random_posterior(4), b in random_posterior(4)) {
        let m = diag_mass(&[1.0, 0.7, 1.3, 0.9]);
        let ab = wasserstein2_sq(&a, &b, &m).unwrap();
        let ba = wasserstein2_sq(&b, &a, &m).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0), "{} vs {}", ab, ba);
    }

    #[test]
    fn wasserstein_zero_only_for_equal(a in random_posterior(3), shift in 0usize..3, scale in 0.05..1.0f64) {
        let m = diag_mass(&[1.0, 1.0, 1.0]);
        prop_assert!(wasserstein2_sq(&a, &a, &m).unwrap() <= 1e-10);
        let mut moved = a.clone();
        moved.map[shift] += scale;
        prop_assert!(wasserstein2_sq(&moved, &a, &m).unwrap() >= 0.99 * scale * scale);
        let mut wider = a.clone();
        wider.covariance[(shift, shift)] += scale;
        prop_assert!(wasserstein2_sq(&wider, &a, &m).unwrap() > 1e-6 * scale);
    }
}

#[test]
fn quantiles_interpolate() {
    let d = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(median(&d), 2.5);
    assert_eq!(quantile(&d, 0.0), 1.0);
    assert_eq!(quantile(&d, 1.0), 4.0);
    assert!((quantile(&d, 0.25) - 1.75).abs() < 1e-15);
    assert!(median(&[]).is_nan());
}

#[test]
fn slope_of_power_law() {
    let x = [2.0, 5.0, 10.0, 100.0];
    let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
    assert!((loglog_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
    assert!(loglog_slope(&[1.0], &[1.0]).is_err());
    assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
}

#[test]
fn mass_norm_uses_weights() {
    let x = DVector::from_vec(vec![1.0, 2.0]);
    assert!((m_norm(&x, &diag_mass(&[4.0, 1.0])) - 8.0f64.sqrt()).abs() < 1e-15);
    assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
}

#[test]
fn derived_seeds_are_stable_and_distinct() {
    assert_eq!(derive_seed(1, "truth", 0), derive_seed(1, "truth", 0));
    assert_ne!(derive_seed(1, "truth", 0), derive_seed(1, "truth", 1));
    assert_ne!(derive_seed(1, "truth", 0), derive_seed(2, "truth", 0));
    assert_ne!(derive_seed(1, "truth", 0), derive_seed(1, "noise", 0));
}

#[test]
fn config_validation() {
    let c = StudyConfig::example1();
    c.validate().unwrap();
    let back = StudyConfig::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(back, c);

    let mut bad = c.clone();
    bad.n_grid = vec![5, 5, 10];
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut bad = c.clone();
    bad.seeds = 0;
    assert!(bad.validate().unwrap_err().is_config());
    let mut bad = c.clone();
    bad.n_grid = vec![];
    assert!(bad.validate().is_err());
    let mut bad = c.clone();
    bad.expansion = bae_core::taylor::Expansion::AccurateOnly;
    assert!(bad.validate().unwrap_err().is_config());
    bad.estimators = vec![Estimator::Mc, Estimator::CvLin];
    bad.posterior_estimators = vec![Estimator::CvQuad];
    bad.validate().unwrap();

    let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
    v["surprise"] = serde_json::json!(1);
    assert!(StudyConfig::from_json(&v.to_string()).unwrap_err().is_config());
    assert!(StudyConfig::preset("example3").unwrap_err().is_config());
}

#[test]
fn shipped_configs_match_presets() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, preset) in [("example1.json", StudyConfig::example1()), ("example2.json", StudyConfig::example2())] {
        let c = StudyConfig::load(&dir.join(file)).unwrap();
        assert_eq!(c, preset, "{file}");
    }
}

#[test]
fn experiment_dimensions() {
    let exp = Experiment::build(tiny_robin()).unwrap();
    // m lives on the bottom boundary nodes, beta on the triangles
    assert_eq!(exp.m_dim(), 11);
    assert_eq!(exp.prior.dim(), 11 + 2 * 10 * 3);
    assert_eq!(exp.noise.dim(), 8);
    assert_eq!(exp.truth.len(), exp.prior.dim());
    let e = Experiment::build(tiny_semilinear()).unwrap();
    assert_eq!(e.m_dim(), 81);
    assert_eq!(e.prior.dim(), 162);
}

#[test]
fn smallest_convergence_study() {
    let mut c = tiny_robin();
    c.estimators = vec![Estimator::Mc];
    c.n_grid = vec![2];
    c.seeds = 1;
    let exp = Experiment::build(c).unwrap();
    let reference = exp.reference().unwrap().clone();
    let r = convergence_study(&exp, &reference).unwrap();
    assert_eq!(r.rows.len(), 1);
    assert_eq!(r.summary.len(), 1);
    assert!(r.monitors.is_empty());
}

#[test]
fn convergence_study_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let exp = Experiment::build(tiny_robin()).unwrap();
        let reference = exp.reference().unwrap().clone();
        let r = convergence_study(&exp, &reference).unwrap();
        let p = dir.path().join(format!("c{k}.csv"));
        let s = dir.path().join(format!("s{k}.csv"));
        io::write_convergence(&p, &r.rows).unwrap();
        io::write_spectra(&s, &r.spectra).unwrap();
        bytes.push((std::fs::read(&p).unwrap(), std::fs::read(&s).unwrap()));

        // sample-free rows sit at N = 0; every sampling cell has one row per seed
        let sf = r.rows.iter().filter(|row| row.n == 0).count();
        assert_eq!(sf, 2);
        assert_eq!(r.rows.len(), sf + 3 * 3 * 3);
        assert_eq!(r.monitors.len(), 3);
        let back = io::read_convergence(&p).unwrap();
        assert_eq!(back, r.rows);
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn convergence_study_rejects_mismatched_reference() {
    let exp = Experiment::build(tiny_robin()).unwrap();
    let mut s = tiny_semilinear();
    s.reference_n = 20;
    let reference = Experiment::build(s).unwrap().reference().unwrap().clone();
    assert!(convergence_study(&exp, &reference).unwrap_err().is_config());
}

#[test]
fn accurate_only_expansion_skips_surrogate_sensitivities() {
    let mut c = tiny_robin();
    c.expansion = bae_core::taylor::Expansion::AccurateOnly;
    c.estimators = vec![Estimator::Mc, Estimator::CvLin, Estimator::CvQuad];
    c.posterior_estimators = vec![Estimator::Mc, Estimator::CvLin];
    let exp = Experiment::build(c).unwrap();
    let ledger = cost_ledger(&exp, 4, 5).unwrap();
    for r in &ledger.rows {
        assert_eq!(r.linearized, r.expected);
        assert_eq!(r.surrogate_linearized, 1);
    }
    let report = convergence_study(&exp, exp.reference().unwrap()).unwrap();
    assert!(report.rows.iter().all(|r| r.err_mean_l2.is_finite()));
    let t = exp.taylor().unwrap();
    assert!(exp.estimate(Some(&t), Estimator::SampleFreeLin, &[], 0, 0).is_err());
}

#[test]
fn cost_ledger_matches_solve_counts() {
    let exp = Experiment::build(tiny_robin()).unwrap();
    let ledger = cost_ledger(&exp, 6, 11).unwrap();
    for (est, k) in [(Estimator::Mc, 1), (Estimator::CvLin, 2), (Estimator::CvQuad, 3)] {
        let s = ledger.summary_for(est).unwrap();
        assert!(s.matches_expected);
        assert_eq!(s.mean_linearized, k as f64);
        assert_eq!((s.min_n_fwd, s.max_n_fwd), (1, 1));
    }
    assert!(cost_ledger(&exp, 0, 11).unwrap().rows.is_empty());

    let exp = Experiment::build(tiny_semilinear()).unwrap();
    let ledger = cost_ledger(&exp, 4, 3).unwrap();
    let mc: Vec<&CostRow> = ledger.rows.iter().filter(|r| r.estimator == "mc").collect();
    for est in ["cv-lin", "cv-quad"] {
        let rows: Vec<&CostRow> = ledger.rows.iter().filter(|r| r.estimator == est).collect();
        for (a, b) in mc.iter().zip(&rows) {
            // same draws, so the same Newton iterations
            assert_eq!(a.n_fwd, b.n_fwd);
            assert_eq!(b.linearized, b.expected);
            assert!(b.n_fwd >= 2);
            assert_eq!(b.initial_guess, 1);
        }
    }
}

#[test]
fn posterior_study_small() {
    let mut c = tiny_robin();
    c.posterior_estimators = vec![Estimator::Mc, Estimator::CvLin, Estimator::SampleFreeLin];
    let exp = Experiment::build(c).unwrap();
    let reference = exp.reference().unwrap().clone();
    let r = posterior_study(&exp, &reference, &[50]).unwrap();
    assert_eq!(r.failures, 0);
    // per realization: three baselines, one sample-free cell, 2 x 2 x 2 sampled cells, one extra
    assert_eq!(r.rows.len(), 2 * (3 + 1 + 8 + 1));
    for row in r.rows.iter().filter(|row| row.estimator == posterior::REFERENCE) {
        assert!(row.w2_sq <= 1e-8 && row.map_error <= 1e-8, "{row:?}");
    }
    assert!(r.rows.iter().all(|row| row.w2_sq >= 0.0 && row.map_error >= 0.0));
    assert_eq!(r.summary_for("mc", 50).unwrap().count, 2);
}

#[test]
fn csv_header_names_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "estimator,n,seed,err_mean_l2,err_cov_fro\nmc,2,0,1.0,2.0\n").unwrap();
    let e = io::read_convergence(&p).unwrap_err();
    assert!(e.to_string().contains("'err_mean_linf'"), "{e}");

    let p = dir.path().join("empty.csv");
    io::write_spectra(&p, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), io::SPECTRUM_COLUMNS.join(","));
    assert!(io::read_spectra(&p).unwrap().is_empty());
}

#[test]
fn summary_columns_are_prefixed() {
    let cols = io::summary_columns(io::POSTERIOR_METRICS);
    assert_eq!(&cols[..3], ["estimator", "n", "count"]);
    assert!(cols.contains(&"w2_sq_median".to_string()));
    assert!(cols.contains(&"map_error_q75".to_string()));
    assert_eq!(cols.len(), 3 + 2 * 7);
}

#[test]
fn field_export_follows_space() {
    let exp = Experiment::build(tiny_robin()).unwrap();
    let data = exp.data_realization(0).unwrap();
    let post = exp.posterior(&data.data, None).unwrap();
    let space = exp.prior_m.block(0).space.unwrap();
    let f = io::FieldExport::new(&exp.mesh, space, &post, None, vec![]);
    assert_eq!(f.coordinates.len(), exp.m_dim());
    assert!(f.coordinates.iter().all(|c| c[1] == 0.0));
    assert!(f.std.iter().all(|s| *s > 0.0));
    let v: serde_json::Value = serde_json::to_value(&f).unwrap();
    for k in io::FIELD_KEYS {
        assert!(v.get(k).is_some(), "{k}");
    }
}

#[test]
fn schema_document_lists_every_column() {
    let doc = std::fs::read_to_string(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schema.md")).unwrap();
    assert!(doc.contains(&format!("# Output schema (version {})", io::SCHEMA_VERSION)));
    let tables = [io::CONVERGENCE_COLUMNS, io::SPECTRUM_COLUMNS, io::POSTERIOR_COLUMNS, io::COST_COLUMNS];
    for c in tables.iter().flat_map(|t| t.iter()).chain(io::CONVERGENCE_METRICS).chain(io::POSTERIOR_METRICS) {
        assert!(doc.contains(&format!("| {c} |")) || doc.contains(&format!("`{c}")), "{c}");
    }
    for k in io::FIELD_KEYS {
        assert!(doc.contains(&format!("`{k}`")), "{k}");
    }
}

//! Property tests for the documented invariants of each module.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sparsebvar::config::RunConfig;
use sparsebvar::data::{apply_transform, destandardize, standardize, TransformCode};
use sparsebvar::dgp::{draw_dgp, run_replication, run_study, DgpConfig, Sparsity, StudyConfig, StudyEstimator};
use sparsebvar::evaluation::{dm_test, mcs, normalized_errors, LossMatrix, McsConfig};
use sparsebvar::forecast::{forecast_at_origin, simulate_forecast, ExerciseConfig, ForecastDraw, ModelSpec, SparsifySpec, ThetaMode};
use sparsebvar::linalg::{is_positive_definite, ln_multigamma};
use sparsebvar::minnesota::{build_dummies, implied_prior_moments, MinnesotaHyper, ScaleEstimates};
use sparsebvar::posterior::{posterior_moments, sample_posterior};
use sparsebvar::precision::{penalized_objective, penalty_matrix, sparsify_precision, PdRepair, PrecisionConfig};
use sparsebvar::savs::{savs_draw, ColumnNorms, SavsConfig, SavsScheme};
use sparsebvar::var_core::{build_lag_design, companion_spectral_radius, CovMatrix, TimeSeriesPanel, VarCoefficients};

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn random_cov(m: usize, dof: usize, seed: u64) -> CovMatrix {
    let x = gaussian_matrix(dof, m, seed);
    let s = x.transpose() * &x / dof as f64;
    CovMatrix::new((&s + s.transpose()) * 0.5).unwrap()
}

fn small_panel(t: usize, m: usize, seed: u64) -> TimeSeriesPanel {
    let e = gaussian_matrix(t, m, seed);
    let mut y = e.clone();
    for s in 1..t {
        for i in 0..m {
            y[(s, i)] += 0.4 * y[(s - 1, i)];
        }
    }
    TimeSeriesPanel::from_matrix(y).unwrap()
}

// ---------- var_core

proptest! {
    #[test]
    fn design_rows_align_with_panel(t in 8usize..30, m in 1usize..4, p in 1usize..4, seed in any::<u64>()) {
        prop_assume!(t > p + 1);
        let panel = small_panel(t, m, seed);
        let d = build_lag_design(&panel, p).unwrap();
        let v = panel.values();
        prop_assert_eq!(d.y.nrows(), t - p);
        for r in 0..d.y.nrows() {
            for i in 0..m {
                prop_assert_eq!(d.y[(r, i)], v[(r + p, i)]);
                for lag in 1..=p {
                    prop_assert_eq!(d.x[(r, (lag - 1) * m + i)], v[(r + p - lag, i)]);
                }
            }
            prop_assert_eq!(d.x[(r, m * p)], 1.0);
        }
    }

    #[test]
    fn vectorize_round_trips(m in 1usize..5, p in 1usize..5, seed in any::<u64>()) {
        let a = gaussian_matrix(m * p + 1, m, seed);
        let c = VarCoefficients::new(a, m, p).unwrap();
        prop_assert_eq!(VarCoefficients::devectorize(&c.vectorize(), m, p).unwrap(), c);
    }

    #[test]
    fn diagonal_var1_radius_is_largest_entry(d in prop::collection::vec(-1.5f64..1.5, 1..6)) {
        let m = d.len();
        let lag = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
        let c = VarCoefficients::from_lag_matrices(&[lag], &DVector::zeros(m)).unwrap();
        let expect = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!((companion_spectral_radius(&c).unwrap() - expect).abs() < 1e-10);
    }
}

// ---------- minnesota_prior

proptest! {
    #[test]
    fn dummy_gram_is_block_diagonal(m in 1usize..5, p in 1usize..4, theta in 0.01f64..5.0, sig in prop::collection::vec(0.1f64..3.0, 4)) {
        let hyper = MinnesotaHyper::new(m, theta);
        let scales = ScaleEstimates::new(sig[..m].to_vec()).unwrap();
        let d = build_dummies(&hyper, &scales, m, p).unwrap();
        let g = d.x_dummy.transpose() * &d.x_dummy;
        let n = m * p + 1;
        for r in 0..n {
            for c in 0..n {
                let expect = if r != c {
                    0.0
                } else if r == n - 1 {
                    1.0 / hyper.pi
                } else {
                    let (lag, i) = (r / m + 1, r % m);
                    (lag as f64 * sig[i] / theta).powi(2)
                };
                prop_assert!((g[(r, c)] - expect).abs() <= 1e-12 * expect.abs().max(1e-12));
            }
        }
        let half = build_dummies(&hyper.with_theta1(theta / 2.0), &scales, m, p).unwrap();
        let gh = half.x_dummy.transpose() * &half.x_dummy;
        for r in 0..n - 1 {
            prop_assert!((gh[(r, r)] - 4.0 * g[(r, r)]).abs() <= 1e-10 * g[(r, r)]);
        }
    }

    #[test]
    fn prior_mean_centers_on_phi(m in 1usize..5, p in 1usize..4, phi in prop::collection::vec(-1.0f64..1.0, 4)) {
        let mut hyper = MinnesotaHyper::new(m, 0.2);
        hyper.phi = phi[..m].to_vec();
        let scales = ScaleEstimates::new(vec![1.3; m]).unwrap();
        let d = build_dummies(&hyper, &scales, m, p).unwrap();
        let prior = implied_prior_moments(&d, &hyper).unwrap();
        for r in 0..m * p + 1 {
            for eq in 0..m {
                let expect = if r == eq { phi[eq] } else { 0.0 };
                prop_assert!((prior.a0[(r, eq)] - expect).abs() < 1e-10);
            }
        }
    }
}

// ---------- conjugate_posterior

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tighter_prior_shrinks_posterior_variance(seed in any::<u64>(), lo in 0.01f64..0.5, ratio in 1.01f64..10.0) {
        let panel = small_panel(40, 2, seed);
        let design = build_lag_design(&panel, 2).unwrap();
        let scales = ScaleEstimates::new(vec![1.0, 1.2]).unwrap();
        let v = |theta: f64| {
            let h = MinnesotaHyper::new(2, theta);
            posterior_moments(&design, &build_dummies(&h, &scales, 2, 2).unwrap(), h.s0).unwrap().v_bar
        };
        let (tight, loose) = (v(lo), v(lo * ratio));
        let xs = gaussian_matrix(10, 5, seed ^ 1);
        for x in xs.row_iter() {
            let x = x.transpose();
            prop_assert!(x.dot(&(&tight * &x)) <= x.dot(&(&loose * &x)) * (1.0 + 1e-10));
        }
    }

    #[test]
    fn sampled_covariances_are_positive_definite(seed in any::<u64>(), m in 1usize..4) {
        let panel = small_panel(30, m, seed);
        let design = build_lag_design(&panel, 2).unwrap();
        let h = MinnesotaHyper::new(m, 0.3);
        let d = build_dummies(&h, &ScaleEstimates::new(vec![1.0; m]).unwrap(), m, 2).unwrap();
        let mo = posterior_moments(&design, &d, h.s0).unwrap();
        for draw in sample_posterior(&mo, 50, seed).unwrap() {
            prop_assert!(is_positive_definite(draw.cov.sigma()));
        }
    }

    #[test]
    fn multigamma_reduces_to_gamma(a in 0.6f64..50.0) {
        prop_assert!((ln_multigamma(1, a) - statrs::function::gamma::ln_gamma(a)).abs() < 1e-12);
        let two = 0.5 * std::f64::consts::PI.ln() + statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(a - 0.5);
        prop_assert!((ln_multigamma(2, a) - two).abs() < 1e-10);
    }
}

// ---------- savs_sparsifier

fn savs_inputs(m: usize, p: usize, seed: u64) -> (VarCoefficients, ColumnNorms) {
    let a = gaussian_matrix(m * p + 1, m, seed) * 0.3;
    let norms = gaussian_matrix(m * p + 1, 1, seed ^ 7).map(|v| 5.0 + 50.0 * v.abs());
    (VarCoefficients::new(a, m, p).unwrap(), ColumnNorms { norms_sq: norms.iter().copied().collect() })
}

proptest! {
    #[test]
    fn savs_shrinks_and_keeps_signs(m in 1usize..5, p in 1usize..4, seed in any::<u64>(), lambda in 0.0f64..5.0, lagwise in any::<bool>()) {
        let (draw, norms) = savs_inputs(m, p, seed);
        let cfg = SavsConfig { lambda, scheme: if lagwise { SavsScheme::LagWise } else { SavsScheme::Plain }, ..Default::default() };
        let out = savs_draw(&draw, &norms, &cfg).unwrap();
        for (a, b) in draw.matrix().iter().zip(out.coeffs_sparse.matrix().iter()) {
            prop_assert!(b.abs() <= a.abs());
            prop_assert!(*b == 0.0 || b.signum() == a.signum());
        }
        // excluded entries are copied through under the defaults
        let (a, b) = (draw.matrix(), out.coeffs_sparse.matrix());
        for eq in 0..m {
            prop_assert_eq!(a[(m * p, eq)], b[(m * p, eq)]);
            prop_assert_eq!(a[(eq, eq)], b[(eq, eq)]);
        }
    }

    #[test]
    fn savs_zero_count_grows_with_lambda(m in 1usize..5, p in 1usize..4, seed in any::<u64>()) {
        let (draw, norms) = savs_inputs(m, p, seed);
        let mut last = 0;
        for lambda in [0.0, 0.01, 0.1, 0.5, 1.0, 5.0, 50.0] {
            let z = savs_draw(&draw, &norms, &SavsConfig::with_lambda(lambda)).unwrap().zero_count();
            prop_assert!(z >= last);
            last = z;
        }
    }

    #[test]
    fn savs_is_one_separable_coordinate_sweep(m in 1usize..4, p in 1usize..3, seed in any::<u64>(), lambda in 0.0f64..3.0) {
        let (draw, norms) = savs_inputs(m, p, seed);
        let cfg = SavsConfig { lambda, scheme: SavsScheme::Plain, sparsify_intercept: true, sparsify_first_own_lag: true, ..Default::default() };
        let out = savs_draw(&draw, &norms, &cfg).unwrap();
        // minimize ½ c (a - x)² + κ |x| over a fine bracket around the analytic point
        for (r, eq) in (0..m * p + 1).flat_map(|r| (0..m).map(move |e| (r, e))) {
            let a = draw.matrix()[(r, eq)];
            let c = norms.norms_sq[r];
            let kappa = lambda / a.abs().powi(2);
            let f = |x: f64| 0.5 * c * (a - x).powi(2) + kappa * x.abs();
            let got = out.coeffs_sparse.matrix()[(r, eq)];
            for probe in [0.0, a, got + 1e-7, got - 1e-7] {
                prop_assert!(f(got) <= f(probe) + 1e-12 * f(probe).abs().max(1.0));
            }
        }
    }
}

// ---------- precision_sparsifier

proptest! {
    #[test]
    fn precision_invariants(m in 2usize..7, extra in 1usize..10, seed in any::<u64>(), varpi in 0.0005f64..0.5) {
        let cov = random_cov(m, m + extra, seed);
        let p = cov.precision();
        let cfg = PrecisionConfig { varpi, ..Default::default() };
        let rho = penalty_matrix(&p, &cfg);
        let out = sparsify_precision(&cov, &cfg).unwrap();
        let w = &out.omega;
        prop_assert!(is_positive_definite(w));
        for i in 0..m {
            for j in 0..m {
                prop_assert_eq!(w[(i, j)], w[(j, i)]);
                if i != j {
                    prop_assert!(w[(i, j)].abs() <= p[(i, j)].abs());
                    prop_assert!(w[(i, j)] == 0.0 || w[(i, j)].signum() == p[(i, j)].signum());
                }
            }
        }
        if !out.repaired {
            prop_assert!(penalized_objective(w, cov.sigma(), &rho) <= penalized_objective(&p, cov.sigma(), &rho));
        }
    }

    #[test]
    fn diagonal_kept_without_refit(m in 2usize..7, extra in 1usize..10, seed in any::<u64>(), varpi in 0.0005f64..0.5) {
        let cov = random_cov(m, m + extra, seed);
        let cfg = PrecisionConfig { varpi, refit_diagonal: false, pd_repair: PdRepair::Reject, ..Default::default() };
        if let Ok(out) = sparsify_precision(&cov, &cfg) {
            let p = cov.precision();
            for i in 0..m {
                prop_assert_eq!(out.omega[(i, i)], p[(i, i)]);
            }
        }
    }

    #[test]
    fn precision_edges_thin_out_with_varpi(m in 2usize..7, extra in 1usize..10, seed in any::<u64>()) {
        let cov = random_cov(m, m + extra, seed);
        let mut last = 0;
        for varpi in [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 10.0] {
            let cfg = PrecisionConfig { varpi, refit_diagonal: false, ..Default::default() };
            let zeros = sparsify_precision(&cov, &cfg).unwrap().zero_mask.iter().filter(|z| **z).count();
            prop_assert!(zeros >= last, "varpi {}: {} < {}", varpi, zeros, last);
            last = zeros;
        }
    }
}

// ---------- dgp_simulator

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planted_zero_counts_hit_targets(m in 2usize..8, seed in any::<u64>(), frac in 0.0f64..0.95) {
        let cfg = DgpConfig { m, sparsity: Sparsity::Custom(frac), seed, ..Default::default() };
        let truth = draw_dgp(&cfg).unwrap();
        let per = |n: usize| (frac * n as f64).round() as usize;
        let expect = per(m * (m - 1)) + (cfg.p - 1) * per(m * m);
        prop_assert_eq!(truth.zero_mask_coeffs.iter().filter(|z| **z).count(), expect);
        prop_assert_eq!(truth.zero_mask_chol.iter().filter(|z| **z).count(), per(m * (m - 1) / 2));
        for i in 0..m {
            prop_assert!((truth.sigma_true.sigma()[(i, i)] - 0.25).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_penalty_estimators_match_benchmark_on_shared_data() {
    let cell = DgpConfig { m: 3, t: 80, seed: 17, ..Default::default() };
    let study = StudyConfig {
        cells: vec![cell.clone()],
        replications: 3,
        draws: 60,
        estimators: vec![StudyEstimator::Sparse { lambda: 0.0 }, StudyEstimator::Sparse { lambda: 1.0 }],
        ..Default::default()
    };
    let (rows, reps) = run_study(&study).unwrap();
    assert_eq!(rows[1].mean_ratio_coeffs, 1.0);
    assert_eq!(rows[1].mean_ratio_cov, 1.0);
    let other = StudyConfig { estimators: vec![StudyEstimator::Cda { lambda: 0.5 }], ..study };
    for (r, rep) in reps[0].iter().enumerate() {
        assert_eq!(run_replication(&cell, &other, r).unwrap().data_hash, rep.data_hash);
    }
}

// ---------- forecasting

fn toy_spec(sparsify: Option<SparsifySpec>) -> ModelSpec {
    ModelSpec {
        name: "toy".into(),
        variables: vec!["y1".into(), "y2".into()],
        factor_inputs: vec![],
        n_factors: 0,
        p: 2,
        theta: ThetaMode::Fixed(0.2),
        sparsify,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_penalty_sparse_forecasts_equal_plain(seed in any::<u64>()) {
        let panel = small_panel(50, 2, seed);
        let cfg = ExerciseConfig { horizons: vec![1, 3], draws: 40, sims_per_draw: 2, seed, targets: vec!["y1".into(), "y2".into()] };
        let plain = forecast_at_origin(&panel, &toy_spec(None), &cfg, 45).unwrap();
        let sparse = forecast_at_origin(&panel, &toy_spec(Some(SparsifySpec::with_lambda(0.0))), &cfg, 45).unwrap();
        prop_assert_eq!(&plain.run, &sparse.run);
        // point forecasts are sample means of the simulated values
        for (k, paths) in plain.run.paths.iter().enumerate() {
            for c in 0..2 {
                let mean = paths.column(c).sum() / paths.nrows() as f64;
                prop_assert!((plain.run.point[k][c] - mean).abs() < 1e-12);
            }
        }
        // standardization uses data through the origin only
        let (_, stats) = standardize(&panel.slice_rows(0, 46).unwrap()).unwrap();
        prop_assert_eq!(&plain.standardization, &stats);
    }
}

#[test]
fn intercept_only_forecast_centers_on_intercept() {
    let c = DVector::from_vec(vec![1.5, -0.5]);
    let draw = ForecastDraw {
        coeffs: VarCoefficients::from_lag_matrices(&[DMatrix::zeros(2, 2)], &c).unwrap(),
        cov: CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap(),
    };
    let run = simulate_forecast(&[draw], &DMatrix::zeros(3, 2), &[1, 5], &[0, 1], 20_000, 3).unwrap();
    for k in 0..2 {
        for i in 0..2 {
            assert!((run.point[k][i] - c[i]).abs() < 0.03, "{} vs {}", run.point[k][i], c[i]);
            assert_eq!(run.cond_means[k][(0, i)], c[i]);
        }
    }
}

// ---------- evaluation

proptest! {
    #[test]
    fn dm_is_antisymmetric(d in prop::collection::vec(-5.0f64..5.0, 10..60), h in 1usize..5) {
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (a, b) = (dm_test(&d, h).unwrap(), dm_test(&neg, h).unwrap());
        prop_assert_eq!(a.statistic, -b.statistic);
        prop_assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn normalized_errors_ignore_monotone_transforms(seed in any::<u64>(), n in 20usize..40) {
        let draws = gaussian_matrix(n, 50, seed);
        let real = gaussian_matrix(n, 1, seed ^ 3);
        let f = |x: f64| x.powi(3) + 2.0 * x + 1.0;
        let rows: Vec<Vec<f64>> = draws.row_iter().map(|r| r.iter().copied().collect()).collect();
        let rows_f: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect();
        let a = normalized_errors(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), real.as_slice()).unwrap();
        let real_f: Vec<f64> = real.iter().map(|&x| f(x)).collect();
        let b = normalized_errors(&rows_f.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), &real_f).unwrap();
        prop_assert_eq!(a.z, b.z);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mcs_grows_as_alpha_falls(seed in any::<u64>(), k in 3usize..7) {
        let noise = gaussian_matrix(40, k, seed);
        let losses = DMatrix::from_fn(40, k, |t, j| noise[(t, j)] + 0.15 * j as f64);
        let lm = LossMatrix::new((0..k).map(|j| format!("m{j}")).collect(), losses).unwrap();
        let mut prev: Option<Vec<usize>> = None;
        for alpha in [0.5, 0.25, 0.1, 0.05, 0.01] {
            let mut set = mcs(&lm, &McsConfig { alpha, replications: 500, seed, block_len: None }).unwrap().superior;
            set.sort();
            if let Some(p) = &prev {
                prop_assert!(p.iter().all(|j| set.contains(j)));
            }
            prev = Some(set);
        }
    }
}

// ---------- data_pipeline

proptest! {
    #[test]
    fn transforms_shorten_by_their_order(xs in prop::collection::vec(0.5f64..100.0, 4..40)) {
        for (code, lost) in [(1, 0), (2, 1), (5, 1), (6, 2), (7, 2)] {
            let c = TransformCode::from_code(code).unwrap();
            prop_assert_eq!(apply_transform(&xs, c, "x").unwrap().len(), xs.len() - lost);
            prop_assert_eq!(c.order(), lost);
        }
    }

    #[test]
    fn standardization_inverts(seed in any::<u64>(), t in 3usize..40, m in 1usize..5, scale in 0.01f64..1e3) {
        let x = gaussian_matrix(t, m, seed) * scale;
        let panel = TimeSeriesPanel::from_matrix(x.add_scalar(7.0)).unwrap();
        let (z, stats) = standardize(&panel).unwrap();
        let back = destandardize(&z, &stats).unwrap();
        for (a, b) in back.values().iter().zip(panel.values().iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

// ---------- cli

proptest! {
    #[test]
    fn config_round_trips(seed in any::<u64>(), draws in 1usize..5000, lambdas in prop::collection::vec(0.0f64..10.0, 1..4), theta in 0.001f64..10.0, varpi in prop::option::of(0.0f64..1.0)) {
        let mut cfg = RunConfig::default();
        cfg.sampling.seed = seed;
        cfg.sampling.draws = draws;
        let mut l = lambdas;
        l.sort_by(f64::total_cmp);
        l.dedup();
        cfg.sparsify.lambdas = l;
        cfg.sparsify.varpi = varpi;
        cfg.model.theta1 = theta;
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
    }
}

use super::*;
use crate::flow::find_equilibria;

fn rect() -> KernelSpec {
    KernelSpec::rectangular()
}

#[test]
fn derived_seeds_are_deterministic_and_distinct() {
    let mut seen = std::collections::HashSet::new();
    for stream in [500u64, 1000, 2000] {
        for k in 0..200 {
            assert!(seen.insert(derive_seed(7, stream, k)));
        }
    }
    assert_eq!(derive_seed(7, 500, 3), derive_seed(7, 500, 3));
    assert_ne!(derive_seed(7, 500, 3), derive_seed(8, 500, 3));
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let model = ModelSpec::excitatory_inhibitory(150).with_horizon(4.0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| clt_study(&model, 0.0, &rect(), 150, BandwidthRule::CLT, 12, 5).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.samples, three.samples);
    assert_eq!(one.variance.to_bits(), three.variance.to_bits());
}

#[test]
fn replicate_map_keeps_index_order() {
    assert_eq!(replicate_map(50, |k| k * k), (0..50).map(|k| k * k).collect::<Vec<_>>());
    let err = try_replicate_map(10, |k| if k >= 4 { invalid(format!("bad {k}")) } else { Ok(k) }).unwrap_err();
    assert_eq!(err.to_string(), "invalid experiment plan: bad 4");
}

#[test]
fn bandwidth_rules() {
    assert!((BandwidthRule::FIGURE.at(20000) - 0.0078).abs() < 1e-4);
    assert!((BandwidthRule::rate_optimal(1.0).exponent - 1.0 / 3.0).abs() < 1e-15);
    assert!(BandwidthRule { scale: 1.0, exponent: 0.5 }.validate().is_err());
    assert!(BandwidthRule { scale: 0.0, exponent: 0.3 }.validate().is_err());
    assert!(BandwidthRule::CLT.validate().is_ok());
}

#[test]
fn figure_presets() {
    assert!((FigurePreset::Fig1.model(10).w() - 0.5).abs() < 1e-15);
    assert!((FigurePreset::Fig3.model(10).w() - 2.0).abs() < 1e-15);
    assert!((FigurePreset::Fig4.model(10).w() - 0.5).abs() < 1e-15);
    assert_eq!(FigurePreset::Fig3.model(10).x0, 0.1);
    assert_eq!(FigurePreset::Fig4.points().len(), 7);
    for p in [FigurePreset::Fig1, FigurePreset::Fig3, FigurePreset::Fig4] {
        assert_eq!(FigurePreset::parse(p.name()), Some(p));
    }
    assert_eq!(FigurePreset::parse("fig2"), None);
}

#[test]
fn figure_run_reports_every_point() {
    let run = reproduce_figure(FigurePreset::Fig1, 300, 3).unwrap();
    assert_eq!(run.rows.len(), 9);
    assert!(run.events > 0);
    for r in &run.rows {
        assert!((r.true_f - (2.0 - (-r.x_star * r.x_star).exp())).abs() < 1e-15);
        assert_eq!(r.error, r.estimate - r.true_f);
        assert!(r.a_lim > 0.0);
    }
    let csv = run.to_csv();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with(FIGURE_CSV_HEADER));
    assert_eq!(run.checks(10.0).len(), 9);
    assert!(all_pass(&run.checks(10.0)));
    assert!(!all_pass(&run.checks(0.0)));
}

#[test]
fn disjoint_blocks_follow_the_given_order() {
    let (blocks, disjoint) = observation_blocks(20000, &PARTIAL_GAMMAS).unwrap();
    assert!(disjoint);
    let spans: Vec<(usize, usize)> = blocks.iter().map(|b| (b.start, b.end)).collect();
    assert_eq!(spans, vec![(0, 10000), (10000, 15000), (15000, 16000), (16000, 16100)]);
    let (nested, disjoint) = observation_blocks(10000, &[100, 1000, 5000, 10000]).unwrap();
    assert!(!disjoint);
    assert!(nested.iter().all(|b| b.start == 0 && b.end == b.gamma));
    assert!(observation_blocks(100, &[101]).is_err());
    assert!(observation_blocks(100, &[0]).is_err());
    assert!(observation_blocks(100, &[]).is_err());
}

#[test]
fn full_subsystem_matches_the_full_estimator() {
    let model = FigurePreset::Fig1.model(400);
    let h = BandwidthRule::FIGURE.at(400);
    let full = run_figure(&model, &FIG1_POINTS, &rect(), h, 11).unwrap();
    let partial = reproduce_partial_obs(&model, &[400], &FIG1_POINTS, &rect(), h, 11).unwrap();
    for (a, b) in full.rows.iter().zip(partial.rows_for(400)) {
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits(), "x* = {}", a.x_star);
    }
    assert!(partial.to_csv().starts_with(PARTIAL_CSV_HEADER));
}

#[test]
fn partial_variance_rows_are_sorted_by_gamma() {
    let model = FigurePreset::Fig1.model(400);
    let pv = partial_variance(&model, &[400, 20, 100], 0.6, &rect(), 0.05, 2, 6).unwrap();
    let gammas: Vec<usize> = pv.rows.iter().map(|r| r.gamma).collect();
    assert_eq!(gammas, vec![20, 100, 400]);
    assert!(pv.rows.iter().all(|r| r.estimates.len() == 6 && r.variance >= 0.0));
    assert_eq!(pv.checks().len(), 2);
    assert_eq!(pv.is_nonincreasing(), all_pass(&pv.checks()));
    assert!(partial_variance(&model, &[400], 0.6, &rect(), 0.05, 2, 1).is_err());
}

#[test]
fn exact_power_law_gives_the_exact_slope() {
    let rows: Vec<RiskRow> =
        [500usize, 1000, 2000, 4000, 8000].iter().map(|&n| RiskRow::synthetic(n, 3.0 * (n as f64).powf(-2.0 / 3.0))).collect();
    let curve = RiskCurve::from_rows(rows).unwrap();
    assert!((curve.slope + 2.0 / 3.0).abs() < 1e-12);
    assert!((curve.intercept - 3f64.ln()).abs() < 1e-10);
    assert!(all_pass(&curve.checks(-2.0 / 3.0, 0.2)));
    let two = vec![RiskRow::synthetic(500, 1.0), RiskRow::synthetic(1000, 0.5), RiskRow::synthetic(1000, 0.5)];
    assert!(RiskCurve::from_rows(two).is_err());
    let zero = vec![RiskRow::synthetic(1, 1.0), RiskRow::synthetic(2, 0.0), RiskRow::synthetic(3, 0.5)];
    assert!(RiskCurve::from_rows(zero).is_err());
}

#[test]
fn small_risk_curve_counts_replicates() {
    let model = ModelSpec::excitatory_inhibitory(1).with_horizon(5.0);
    let plan = ExperimentPlan::new(model.clone(), vec![100, 200, 400], BandwidthRule::rate_optimal(1.0), 6, vec![0.2], 9);
    let curve = risk_curve(&plan, &model.rate).unwrap();
    assert_eq!(curve.rows.len(), 3);
    for r in &curve.rows {
        assert_eq!(r.replicates, 6);
        assert_eq!(r.squared_errors.len() + r.omega_failures, 6);
        assert!(r.squared_errors.iter().all(|e| *e >= 0.0));
    }
    assert!(curve.slope.is_finite());
    assert_eq!(curve.to_csv().lines().count(), 4);
    let bad = ExperimentPlan::new(model.clone(), vec![100, 200], BandwidthRule::rate_optimal(1.0), 2, vec![0.2], 9);
    assert!(risk_curve(&bad, &model.rate).is_err());
}

#[test]
fn clt_at_an_equilibrium_is_rejected() {
    let model = FigurePreset::Fig1.model(100);
    let root = find_equilibria(&model, (-2.0, 2.0))[0];
    let err = clt_study(&model, root, &rect(), 100, BandwidthRule::CLT, 10, 1).unwrap_err();
    assert!(matches!(err, ExperimentError::Estimator(EstimatorError::DegenerateVariance(_))), "{err}");
}

#[test]
fn clt_report_standardizes_with_the_run_bandwidth() {
    let model = FigurePreset::Fig1.model(1).with_horizon(3.0);
    let r = clt_study(&model, 0.0, &rect(), 200, BandwidthRule::CLT, 10, 4).unwrap();
    assert!((r.kappa2 - 0.25).abs() < 1e-10);
    assert_eq!(r.bandwidth, 200f64.powf(-0.45));
    assert_eq!(r.samples.len(), 10);
    assert_eq!(r.checks(0.25, 0.01).len(), 3);
    assert_eq!(r.to_csv().lines().count(), 11);
}

#[test]
fn estimate_is_a_scale_free_quotient() {
    let model = FigurePreset::Fig1.model(100);
    let traj = simulate(&model, 2, RecordLevel::EventsOnly).unwrap();
    let r = estimate_rate(&traj, &EstimatorConfig::new(rect(), 0.1, 0.0)).unwrap();
    for c in [0.5, 3.0, 1e3] {
        let q = (c * r.numerator) / (c * r.denominator);
        assert!((q - r.estimate).abs() <= 4.0 * f64::EPSILON * r.estimate.abs());
    }
}

#[test]
fn strong_study_rows() {
    let model = FigurePreset::Fig1.model(1).with_horizon(2.0);
    let s = strong_approx_study(&model, &[50, 100], 3, 20, 1).unwrap();
    assert_eq!(s.rows.len(), 2);
    assert!(s.rows.iter().all(|r| r.mean_sup_sq > 0.0 && r.replicates == 3));
    assert!(s.spread >= 1.0);
    assert!(strong_approx_study(&model, &[], 3, 20, 1).is_err());
}

#[test]
fn extinction_study_counts() {
    let model = FigurePreset::Fig4.model(50);
    let s = extinction_study(&model, 5, 3, None, None).unwrap();
    assert_eq!(s.reports.len(), 5);
    assert_eq!(s.extinct, s.reports.iter().filter(|r| r.extinct).count());
    assert!((s.w - 0.5).abs() < 1e-15);
    let loose = extinction_study(&model, 5, 3, Some(0.0), Some(f64::INFINITY)).unwrap();
    assert_eq!(loose.extinct, 5);
    assert!(all_pass(&loose.checks(true, 1.0)));
    assert!(!all_pass(&loose.checks(false, 0.1)));
}

#[test]
fn error_profile_shape() {
    let model = FigurePreset::Fig1.model(200).with_horizon(10.0);
    let p = error_profile(&model, &FIG1_POINTS, &rect(), 0.1, 1, 3).unwrap();
    assert_eq!(p.mean_abs_error.len(), 9);
    assert!(p.trend_slope.is_finite());
    assert!(error_profile(&model, &[0.0], &rect(), 0.1, 1, 3).is_err());
}

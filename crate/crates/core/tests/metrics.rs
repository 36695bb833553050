use hybridcp::metrics::{
    adaptation_ratio, calibration_slope, correlation, coverage, crps_gaussian, ece, quintile_stats, rmse, winkler_score, CorrelationKind,
    QuintileStat,
};
use hybridcp::{EvalRow, MetricReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn row(y: f64, lower: f64, upper: f64, sigma: f64) -> EvalRow {
    EvalRow { y, yhat: 0.5 * (lower + upper), lower, upper, sigma_raw: sigma, sigma_cal: sigma }
}

/// `∫ (F(x) − 1{x ≥ y})² dx` by composite Simpson on each side of `y`.
fn crps_quadrature(y: f64, mu: f64, sigma: f64) -> f64 {
    let normal = Normal::new(mu, sigma).unwrap();
    let simpson = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| {
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let lo = (mu - 14.0 * sigma).min(y);
    let hi = (mu + 14.0 * sigma).max(y);
    simpson(lo, y, &|x| normal.cdf(x).powi(2)) + simpson(y, hi, &|x| (1.0 - normal.cdf(x)).powi(2))
}

#[test]
fn crps_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (mu, sigma) = (rng.random_range(-10.0..10.0), rng.random_range(0.1..5.0));
        let y = mu + sigma * rng.random_range(-4.0..4.0);
        let exact = crps_gaussian(y, mu, sigma).unwrap();
        let quad = crps_quadrature(y, mu, sigma);
        assert!((exact - quad).abs() < 1e-6, "y={y} mu={mu} sigma={sigma}: {exact} vs {quad}");
    }
}

#[test]
fn crps_special_values() {
    let at_mean = crps_gaussian(3.0, 3.0, 2.0).unwrap();
    let expected = 2.0 * (2.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt());
    assert!((at_mean - expected).abs() < 1e-12);
    assert!((at_mean / 2.0 - 0.2337).abs() < 1e-4);
    assert!((crps_gaussian(5.0, 1.0, 1e-9).unwrap() - 4.0).abs() < 1e-6);
    assert!(crps_gaussian(0.0, 0.0, 0.0).is_err());
}

#[test]
fn coverage_counts_closed_intervals() {
    let mut rows: Vec<EvalRow> = (0..1000).map(|i| row(if i < 943 { 1.0 } else { 5.0 }, 0.0, 2.0, 1.0)).collect();
    assert!((coverage(&rows).unwrap() - 0.943).abs() < 1e-12);
    rows[999].y = 2.0;
    assert!((coverage(&rows).unwrap() - 0.944).abs() < 1e-12);
    assert!(coverage(&[]).is_err());
}

#[test]
fn quintiles_split_evenly_and_ratio_matches_example() {
    let rows: Vec<EvalRow> = (0..10).map(|i| row(0.0, -1.0 - i as f64, 1.0 + i as f64, i as f64)).collect();
    let q = quintile_stats(&rows).unwrap();
    assert!(q.iter().all(|s| s.count == 2));
    assert_eq!(q[0].mean_width, 3.0);
    assert_eq!(q[4].mean_width, 19.0);

    let stat = |w: f64| QuintileStat { count: 200, coverage: 0.95, mean_width: w, mean_sigma: 1.0 };
    let table = [stat(13.21), stat(14.0), stat(15.0), stat(16.0), stat(16.98)];
    assert!((adaptation_ratio(&table).unwrap() - 1.285).abs() < 5e-4);
    let flat = [stat(4.0); 5];
    assert_eq!(adaptation_ratio(&flat).unwrap(), 1.0);
    assert!(adaptation_ratio(&[stat(0.0), stat(1.0), stat(1.0), stat(1.0), stat(1.0)]).is_err());
}

#[test]
fn correlations() {
    let a: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
    assert!((correlation(&a, &a, CorrelationKind::Pearson).unwrap() - 1.0).abs() < 1e-12);
    let rev: Vec<f64> = a.iter().map(|v| -v * v).collect();
    assert_eq!(correlation(&a, &rev, CorrelationKind::Spearman).unwrap(), -1.0);
    assert!(correlation(&a, &vec![1.0; 50], CorrelationKind::Pearson).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let y: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    for kind in [CorrelationKind::Pearson, CorrelationKind::Spearman] {
        let r = correlation(&x, &y, kind).unwrap();
        assert!(r.abs() < 0.05, "{kind:?}: {r}");
    }
}

#[test]
fn ece_small_when_calibrated_and_large_when_not() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.5..5.0)).collect();
    let resid: Vec<f64> = sigma.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
    let mean_sigma = sigma.iter().sum::<f64>() / sigma.len() as f64;
    let e = ece(&sigma, &resid, 10).unwrap();
    assert!(e < 0.1 * mean_sigma, "{e} vs {mean_sigma}");

    let tiny = vec![0.19; 10_000];
    let wide: Vec<f64> = (0..10_000).map(|_| 2.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    let e = ece(&tiny, &wide, 10).unwrap();
    assert!((e - 2.51).abs() < 0.1, "{e}");

    // Residuals ±c have population SD exactly c.
    let pm: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.5 } else { -1.5 }).collect();
    assert!(ece(&[1.5; 100], &pm, 10).unwrap() < 1e-12);
}

#[test]
fn calibration_slope_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sigma: Vec<f64> = (0..5000).map(|_| rng.random_range(0.5..5.0)).collect();
    let abs_resid: Vec<f64> = sigma.iter().map(|s| (0.8 * s + 0.3 * rng.sample::<f64, _>(StandardNormal)).abs()).collect();
    let slope = calibration_slope(&sigma, &abs_resid).unwrap();
    assert!((slope - 0.8).abs() < 0.03, "{slope}");

    let shrunk: Vec<f64> = sigma.iter().map(|s| s / 100.0).collect();
    let s100 = calibration_slope(&shrunk, &abs_resid).unwrap();
    assert!((s100 / slope - 100.0).abs() < 1e-6);

    let noise: Vec<f64> = (0..5000).map(|_| rng.random_range(0.0..4.0)).collect();
    assert!(calibration_slope(&sigma, &noise).unwrap().abs() < 0.05);
    assert!(calibration_slope(&[2.0; 10], &noise[..10]).is_err());
}

#[test]
fn winkler_arithmetic_and_ranking() {
    assert_eq!(winkler_score(3.0, -2.0, 8.0, 0.05), 10.0);
    assert!((winkler_score(9.0, -2.0, 8.0, 0.05) - 50.0).abs() < 1e-12);
    assert!((winkler_score(-3.0, -2.0, 8.0, 0.05) - 50.0).abs() < 1e-12);

    // Same residuals, one narrow interval family and one wide one.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let resid: Vec<f64> = (0..5000).map(|_| 4.2 * rng.sample::<f64, _>(StandardNormal)).collect();
    let score = |half: f64| {
        let rows: Vec<EvalRow> = resid.iter().map(|&r| row(r, -half, half, 1.0)).collect();
        let mean = rows.iter().map(|r| winkler_score(r.y, r.lower, r.upper, 0.05)).sum::<f64>() / rows.len() as f64;
        (coverage(&rows).unwrap(), mean)
    };
    let (cov_narrow, narrow) = score(0.375);
    let (cov_wide, wide) = score(7.995);
    assert!(cov_narrow < 0.2 && cov_wide > 0.93);
    assert!(narrow > wide, "{narrow} vs {wide}");

    // All inside: mean Winkler is the mean width.
    let rows: Vec<EvalRow> = (0..20).map(|i| row(0.0, -(i as f64) - 1.0, 2.0, 1.0)).collect();
    let report = MetricReport::evaluate(&rows, 0.1).unwrap();
    assert_eq!(report.mean_winkler, report.mean_width);
}

#[test]
fn rmse_matches_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in [1usize, 7, 100, 1000] {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let yhat: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut ss = 0.0;
        for i in 0..n {
            ss += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        }
        assert!((rmse(&y, &yhat).unwrap() - (ss / n as f64).sqrt()).abs() < 1e-12);
    }
    let y = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(rmse(&y, &[3.0, 0.0, 5.0, 2.0]).unwrap(), 2.0);
    assert_eq!(rmse(&y, &y).unwrap(), 0.0);
}

#[test]
fn report_is_permutation_invariant_with_distinct_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<EvalRow> = (0..200)
        .map(|i| {
            let s = 0.5 + i as f64 * 0.01;
            let y = s * rng.sample::<f64, _>(StandardNormal);
            row(y, -2.0 * s, 2.0 * s, s)
        })
        .collect();
    let mut shuffled = rows.clone();
    shuffled.reverse();
    let (a, b) = (MetricReport::evaluate(&rows, 0.05).unwrap(), MetricReport::evaluate(&shuffled, 0.05).unwrap());
    assert_eq!(a.coverage, b.coverage);
    assert_eq!(a.quintile_width, b.quintile_width);
    assert!((a.mean_crps.unwrap() - b.mean_crps.unwrap()).abs() < 1e-12);
    assert!(a.adaptation_ratio.unwrap() > 1.0 && !a.anti_adaptive);
}

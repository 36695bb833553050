use hybridcp::data::Matrix;
use hybridcp::forest::{fit_forest, predict_forest, ForestConfig, RandomForest};
use proptest::prelude::*;

fn single_tree() -> ForestConfig {
    ForestConfig { n_trees: 1, max_depth: usize::MAX, min_samples_leaf: 1, mtry: None, bootstrap: false, seed: 0 }
}

/// A full-depth tree on distinct rows must reproduce every training target.
/// Checked against the targets themselves for every subset size up to 32.
#[test]
fn unlimited_tree_interpolates_distinct_rows() {
    for n in 2..=32usize {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, ((i * 13) % 7) as f64]).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 3.5).collect();
        let x = Matrix::from_rows(&rows);
        let cfg = ForestConfig { mtry: Some(2), ..single_tree() };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y, "n = {n}");
    }
}

#[test]
fn serialized_model_predicts_identically() {
    let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.37).sin(), (i % 9) as f64, i as f64 / 50.0]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + r[1] * r[2]).collect();
    let x = Matrix::from_rows(&rows);
    let f = fit_forest(&x, &y, &ForestConfig { seed: 17, ..ForestConfig::new(20, 8) }).unwrap();
    let back = RandomForest::from_json(&f.to_json()).unwrap();
    assert_eq!(back, f);
    assert_eq!(predict_forest(&back, &x).unwrap(), f.predict(&x).unwrap());
}

#[test]
fn same_seed_same_forest_different_seed_different_forest() {
    let rows: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64, (i * i % 17) as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0] * 0.1 + r[1]).collect();
    let x = Matrix::from_rows(&rows);
    let a = fit_forest(&x, &y, &ForestConfig { seed: 1, ..ForestConfig::new(10, 6) }).unwrap();
    let b = fit_forest(&x, &y, &ForestConfig { seed: 1, ..ForestConfig::new(10, 6) }).unwrap();
    let c = fit_forest(&x, &y, &ForestConfig { seed: 2, ..ForestConfig::new(10, 6) }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (4usize..60, 1usize..4).prop_flat_map(|(n, p)| {
        (prop::collection::vec(prop::collection::vec(-10.0f64..10.0, p), n), prop::collection::vec(-100.0f64..100.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Leaves are clamped means, so every prediction lies in the target range.
    #[test]
    fn predictions_stay_in_target_range((rows, y) in dataset(), seed in 0u64..1000, depth in 1usize..10) {
        let x = Matrix::from_rows(&rows);
        let cfg = ForestConfig { n_trees: 5, max_depth: depth, min_samples_leaf: 1, seed, ..Default::default() };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let probe: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * 1.5 - 1.0).collect()).collect();
        for v in f.predict(&x).unwrap().into_iter().chain(f.predict(&Matrix::from_rows(&probe)).unwrap()) {
            prop_assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
        }
    }

    /// Adding a constant to the target shifts every prediction by it.
    #[test]
    fn shift_equivariance((rows, y) in dataset(), shift in -50.0f64..50.0) {
        let x = Matrix::from_rows(&rows);
        let cfg = ForestConfig { n_trees: 3, max_depth: 4, min_samples_leaf: 2, seed: 9, ..Default::default() };
        prop_assume!(y.len() >= 4);
        let base = fit_forest(&x, &y, &cfg).unwrap().predict(&x).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let moved = fit_forest(&x, &shifted, &cfg).unwrap().predict(&x).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a + shift - b).abs() < 1e-8, "{a} + {shift} vs {b}");
        }
    }
}

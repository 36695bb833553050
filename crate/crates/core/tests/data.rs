use std::collections::BTreeSet;

use hybridcp::data::{generate_synthetic, icc_decomposition, stratified_kfold, write_csv, HierarchicalDataset, PatientRecord, SyntheticConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shares(p: f64, h: f64, r: f64, n: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig { n_patients: n, patient_share: p, hospital_share: h, region_share: r, seed, ..Default::default() }
}

/// One-way ANOVA ICC of outcomes grouped by hospital, computed here from
/// scratch as an independent check on the generator.
fn one_way_icc(ds: &HierarchicalDataset) -> f64 {
    let mut groups: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for r in ds.records() {
        groups.entry(&r.hospital_id).or_default().push(r.outcome);
    }
    let n = ds.len() as f64;
    let k = groups.len() as f64;
    let grand = ds.records().iter().map(|r| r.outcome).sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups.values() {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let msb = ssb / (k - 1.0);
    let msw = ssw / (n - k);
    let n0 = (n - groups.values().map(|g| (g.len() * g.len()) as f64).sum::<f64>() / n) / (k - 1.0);
    let s2b = ((msb - msw) / n0).max(0.0);
    s2b / (s2b + msw)
}

#[test]
fn patient_only_shares_give_negligible_hospital_icc() {
    let ds = generate_synthetic(&shares(1.0, 0.0, 0.0, 10_000, 3)).unwrap();
    let icc = one_way_icc(&ds);
    assert!(icc < 0.02, "{icc}");
}

#[test]
fn ungrouped_iid_outcomes_have_small_cluster_shares() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let records: Vec<PatientRecord> = (0..10_000)
        .map(|i| {
            let h = i % 100;
            PatientRecord::new(vec![rng.random::<f64>()], format!("H{h}"), format!("R{}", h % 4), 10.0 + rng.random::<f64>() * 5.0)
        })
        .collect();
    let ds = HierarchicalDataset::from_records(records).unwrap();
    let s = icc_decomposition(&ds).unwrap();
    assert!(s.hospital < 0.03 && s.region < 0.03, "{s:?}");
}

#[test]
fn generator_round_trip_for_other_shares() {
    let ds = generate_synthetic(&shares(0.5, 0.3, 0.2, 20_000, 5)).unwrap();
    let s = icc_decomposition(&ds).unwrap();
    for (got, want) in [(s.patient, 0.5), (s.hospital, 0.3), (s.region, 0.2)] {
        assert!((got - want).abs() <= 0.05, "{s:?}");
    }
}

#[test]
fn generation_is_byte_identical_under_a_seed() {
    let c = SyntheticConfig { n_patients: 3000, heteroscedastic: true, skew: true, seed: 99, ..Default::default() };
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_csv(&generate_synthetic(&c).unwrap(), &mut a).unwrap();
    write_csv(&generate_synthetic(&c).unwrap(), &mut b).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every fold plan partitions the rows, and the test parts of all folds
    /// partition them again.
    #[test]
    fn kfold_partitions(n in 60usize..400, k in 2usize..7, seed in any::<u64>()) {
        let ds = generate_synthetic(&SyntheticConfig { n_patients: n, n_hospitals: 10, n_regions: 2, seed, ..Default::default() }).unwrap();
        let plans = stratified_kfold(&ds, k, seed).unwrap();
        prop_assert_eq!(plans.len(), k);
        let mut tests = BTreeSet::new();
        for p in &plans {
            p.validate(n).unwrap();
            prop_assert!(!p.calib.is_empty() && !p.train.is_empty());
            for &i in &p.test {
                prop_assert!(tests.insert(i), "row {} in two test folds", i);
            }
            let sizes = plans.iter().map(|q| q.test.len());
            let (lo, hi) = (sizes.clone().min().unwrap(), sizes.max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
        prop_assert_eq!(tests.len(), n);
    }
}

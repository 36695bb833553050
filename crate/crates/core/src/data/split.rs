use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, HierarchicalDataset, Result};
use crate::seed::{self, Stream};

const TRAIN_FRACTION: f64 = 0.64;
const CALIB_FRACTION: f64 = 0.16;

/// Disjoint train / calibration / test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Checks the three parts partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.calib).chain(&self.test) {
            if i >= n {
                return Err(DataError::IndexOutOfRange { index: i, len: n });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(DataError::InvalidSplit(format!("row {i} appears twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(DataError::InvalidSplit(format!("row {i} unassigned")));
        }
        Ok(())
    }

    /// Shuffled split with explicit train / calibration sizes; the rest is test.
    pub fn random(n: usize, n_train: usize, n_calib: usize, seed: u64) -> Result<Self> {
        if n_train + n_calib > n {
            return Err(DataError::InvalidSplit(format!("{n_train} + {n_calib} exceeds {n} rows")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::child_rng(seed, Stream::Split, 0));
        let test = idx.split_off(n_train + n_calib);
        let calib = idx.split_off(n_train);
        Ok(Self { train: idx, calib, test })
    }

    /// Shuffled 64 / 16 / 20 split.
    pub fn holdout(n: usize, seed: u64) -> Result<Self> {
        let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
        let n_calib = (CALIB_FRACTION * n as f64).round() as usize;
        Self::random(n, n_train, n_calib.min(n - n_train), seed)
    }

    /// Short content hash for provenance records.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.train, &self.calib, &self.test] {
            h.update((part.len() as u64).to_le_bytes());
            for &i in part {
                h.update((i as u64).to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Outcome quintile (0..5) of every row, from the outcome order statistics
/// with ties broken by row index.
pub fn outcome_quintiles(outcomes: &[f64]) -> Vec<usize> {
    let n = outcomes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| outcomes[a].total_cmp(&outcomes[b]).then(a.cmp(&b)));
    let mut q = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = rank * 5 / n;
    }
    q
}

/// K folds stratified on global outcome quintiles. Each fold's non-test rows
/// are split into train and calibration so that the overall proportions are
/// 64 / 16 / 20 for k = 5.
pub fn stratified_kfold(dataset: &HierarchicalDataset, k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 {
        return Err(DataError::Stratification(format!("k must be at least 2, got {k}")));
    }
    let n = dataset.len();
    if n < 5 {
        return Err(DataError::Stratification(format!("{n} rows cannot form outcome quintiles")));
    }
    let quintile = outcome_quintiles(&dataset.outcomes());
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 5];
    for (i, &q) in quintile.iter().enumerate() {
        strata[q].push(i);
    }
    if let Some((q, s)) = strata.iter().enumerate().find(|(_, s)| s.len() < k) {
        return Err(DataError::Stratification(format!("quintile {q} has {} rows, fewer than k = {k}", s.len())));
    }

    let mut rng = seed::child_rng(seed, Stream::Split, 1);
    for s in &mut strata {
        s.shuffle(&mut rng);
    }
    // Round-robin across the concatenated strata keeps fold sizes within one
    // row of each other and per-stratum counts within one row of n_q / k.
    let ordered: Vec<usize> = strata.concat();
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in ordered.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    let mut plans = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = ordered.iter().copied().filter(|&i| fold_of[i] == f).collect();
        let rest: Vec<usize> = ordered.iter().copied().filter(|&i| fold_of[i] != f).collect();
        let n_calib = calib_count(n, rest.len());
        // Systematic selection over stratum-ordered rows spreads calibration
        // rows evenly across outcome quintiles.
        let m = rest.len();
        let (mut train, mut calib) = (Vec::new(), Vec::new());
        for (j, &i) in rest.iter().enumerate() {
            if (j + 1) * n_calib / m > j * n_calib / m {
                calib.push(i);
            } else {
                train.push(i);
            }
        }
        train.sort_unstable();
        calib.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        plans.push(SplitPlan { train, calib, test });
    }
    Ok(plans)
}

/// Calibration size within one row of 16% of n, leaving train within one
/// row of 64% whenever possible.
fn calib_count(n: usize, non_test: usize) -> usize {
    let target_c = CALIB_FRACTION * n as f64;
    let target_t = TRAIN_FRACTION * n as f64;
    let lo = target_c.floor() as usize;
    [lo, lo + 1]
        .into_iter()
        .filter(|&c| c <= non_test)
        .min_by(|&a, &b| {
            let err = |c: usize| ((c as f64 - target_c).abs()).max(((non_test - c) as f64 - target_t).abs());
            err(a).total_cmp(&err(b))
        })
        .unwrap_or(non_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn dataset(n: usize) -> HierarchicalDataset {
        let records = (0..n)
            .map(|i| PatientRecord::new(vec![i as f64], format!("H{}", i % 7), format!("R{}", i % 7 % 2), (i * 37 % n) as f64))
            .collect();
        HierarchicalDataset::from_records(records).unwrap()
    }

    #[test]
    fn five_folds_partition_and_balance() {
        let ds = dataset(1000);
        let plans = stratified_kfold(&ds, 5, 42).unwrap();
        assert_eq!(plans.len(), 5);
        let q = outcome_quintiles(&ds.outcomes());
        for p in &plans {
            p.validate(1000).unwrap();
            assert_eq!(p.test.len(), 200);
            assert!((p.calib.len() as f64 - 160.0).abs() <= 1.0);
            assert!((p.train.len() as f64 - 640.0).abs() <= 1.0);
            for s in 0..5 {
                let frac = p.test.iter().filter(|&&i| q[i] == s).count() as f64 / p.test.len() as f64;
                assert!((frac - 0.2).abs() <= 0.02);
            }
        }
        let mut all_test: Vec<usize> = plans.iter().flat_map(|p| p.test.clone()).collect();
        all_test.sort_unstable();
        assert_eq!(all_test, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = dataset(300);
        assert_eq!(stratified_kfold(&ds, 5, 42).unwrap(), stratified_kfold(&ds, 5, 42).unwrap());
        assert_ne!(stratified_kfold(&ds, 5, 42).unwrap(), stratified_kfold(&ds, 5, 43).unwrap());
    }

    #[test]
    fn infeasible_strata() {
        let ds = dataset(10);
        assert!(matches!(stratified_kfold(&ds, 5, 1), Err(DataError::Stratification(_))));
        assert!(stratified_kfold(&ds, 1, 1).is_err());
    }

    #[test]
    fn quintiles_break_ties_by_index() {
        let q = outcome_quintiles(&[1.0; 10]);
        assert_eq!(q, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn holdout_fractions() {
        for n in [100, 1003, 77] {
            let p = SplitPlan::holdout(n, 3).unwrap();
            p.validate(n).unwrap();
            assert!((p.train.len() as f64 - 0.64 * n as f64).abs() <= 1.0);
            assert!((p.calib.len() as f64 - 0.16 * n as f64).abs() <= 1.0);
            assert!((p.test.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn validate_rejects_overlap() {
        let p = SplitPlan { train: vec![0, 1], calib: vec![1], test: vec![2] };
        assert!(p.validate(3).is_err());
        let p = SplitPlan { train: vec![0], calib: vec![1], test: vec![] };
        assert!(p.validate(3).is_err());
    }
}

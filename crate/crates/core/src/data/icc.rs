use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, HierarchicalDataset, Result};

/// Variance decomposition of the outcome into nested levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceShares {
    pub patient: f64,
    pub hospital: f64,
    pub region: f64,
    /// Sample variance of the outcomes (n − 1 denominator).
    pub total_variance: f64,
    /// Clamped method-of-moments components (patient, hospital, region).
    pub components: [f64; 3],
}

/// Nested random-effects ANOVA (method of moments, unbalanced design).
///
/// Expected mean squares:
/// `E[MS_within] = σ²_e`,
/// `E[MS_hosp] = σ²_e + k1 σ²_h`,
/// `E[MS_region] = σ²_e + k2 σ²_h + k3 σ²_r`.
/// Negative component estimates are clamped to zero before normalizing.
pub fn icc_decomposition(dataset: &HierarchicalDataset) -> Result<VarianceShares> {
    let n = dataset.len();
    // hospital -> (region, sum, count)
    let mut hospitals: BTreeMap<&str, (&str, f64, usize)> = BTreeMap::new();
    let mut grand = 0.0;
    for r in dataset.records() {
        let e = hospitals.entry(r.hospital_id.as_str()).or_insert((r.region_id.as_str(), 0.0, 0));
        e.1 += r.outcome;
        e.2 += 1;
        grand += r.outcome;
    }
    let h_count = hospitals.len();
    if h_count < 2 {
        return Err(DataError::Decomposition(format!("need at least 2 hospitals, found {h_count}")));
    }
    let mut regions: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (region, sum, count) in hospitals.values() {
        let e = regions.entry(region).or_insert((0.0, 0));
        e.0 += sum;
        e.1 += count;
    }
    let r_count = regions.len();
    if r_count < 2 || regions.values().any(|&(_, c)| c < 2) {
        return Err(DataError::Decomposition("need at least 2 regions with at least 2 rows each".into()));
    }
    if h_count <= r_count {
        return Err(DataError::Decomposition("need more hospitals than regions".into()));
    }
    if n <= h_count {
        return Err(DataError::Decomposition("need more rows than hospitals".into()));
    }
    let nf = n as f64;
    let grand_mean = grand / nf;

    let hosp_mean: BTreeMap<&str, f64> = hospitals.iter().map(|(h, (_, s, c))| (*h, s / *c as f64)).collect();
    let region_mean: BTreeMap<&str, f64> = regions.iter().map(|(r, (s, c))| (*r, s / *c as f64)).collect();

    let mut ss_within = 0.0;
    let mut ss_total = 0.0;
    for r in dataset.records() {
        ss_within += (r.outcome - hosp_mean[r.hospital_id.as_str()]).powi(2);
        ss_total += (r.outcome - grand_mean).powi(2);
    }
    let mut ss_hosp = 0.0;
    let mut sum_nh2_over_nr = 0.0;
    let mut sum_nh2 = 0.0;
    for (h, (region, _, count)) in &hospitals {
        let c = *count as f64;
        ss_hosp += c * (hosp_mean[h] - region_mean[region]).powi(2);
        sum_nh2_over_nr += c * c / regions[region].1 as f64;
        sum_nh2 += c * c;
    }
    let ss_region: f64 = regions.iter().map(|(r, (_, c))| *c as f64 * (region_mean[r] - grand_mean).powi(2)).sum();
    let sum_nr2: f64 = regions.values().map(|&(_, c)| (c * c) as f64).sum();

    let df_within = (n - h_count) as f64;
    let df_hosp = (h_count - r_count) as f64;
    let df_region = (r_count - 1) as f64;
    let ms_within = ss_within / df_within;
    let ms_hosp = ss_hosp / df_hosp;
    let ms_region = ss_region / df_region;

    let k1 = (nf - sum_nh2_over_nr) / df_hosp;
    let k2 = (sum_nh2_over_nr - sum_nh2 / nf) / df_region;
    let k3 = (nf - sum_nr2 / nf) / df_region;

    let var_e = ms_within.max(0.0);
    let var_h = ((ms_hosp - ms_within) / k1).max(0.0);
    let var_r = ((ms_region - ms_within - k2 * var_h) / k3).max(0.0);
    let sum = var_e + var_h + var_r;
    if !(sum > 0.0) {
        return Err(DataError::Decomposition("outcomes have zero variance".into()));
    }
    Ok(VarianceShares {
        patient: var_e / sum,
        hospital: var_h / sum,
        region: var_r / sum,
        total_variance: ss_total / (nf - 1.0),
        components: [var_e, var_h, var_r],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    #[test]
    fn between_cluster_only() {
        let mut records = Vec::new();
        for h in 0..8 {
            for _ in 0..5 {
                records.push(PatientRecord::new(vec![0.0], format!("H{h}"), format!("R{}", h % 2), h as f64 * 1.7 + (h % 3) as f64));
            }
        }
        let ds = HierarchicalDataset::from_records(records).unwrap();
        let s = icc_decomposition(&ds).unwrap();
        assert!(s.patient.abs() < 1e-12);
        assert!((s.patient + s.hospital + s.region - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_grouping() {
        let records = (0..10).map(|i| PatientRecord::new(vec![0.0], "H1", "R1", i as f64)).collect::<Vec<_>>();
        let mut r2 = records.clone();
        r2.push(PatientRecord::new(vec![0.0], "H2", "R1", 3.0));
        let ds = HierarchicalDataset::from_records(r2).unwrap();
        assert!(matches!(icc_decomposition(&ds), Err(DataError::Decomposition(_))));
    }
}

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, FeatureKind, HierarchicalDataset, Result};

/// Imputation and z-scoring for one retained column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlan {
    pub name: String,
    pub source_index: usize,
    pub kind: FeatureKind,
    pub impute: f64,
    pub mean: f64,
    /// Population standard deviation of the imputed training column.
    pub sd: f64,
}

/// Preprocessing fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub columns: Vec<ColumnPlan>,
    /// Constant training columns, dropped rather than standardized.
    pub dropped: Vec<String>,
}

impl PreprocessPlan {
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

pub fn fit_preprocess(train: &HierarchicalDataset) -> Result<PreprocessPlan> {
    if train.is_empty() {
        return Err(DataError::Unimputable("<empty training set>".into()));
    }
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for (j, (name, kind)) in train.feature_names().iter().zip(train.feature_kinds()).enumerate() {
        let mut observed: Vec<f64> = train.records().iter().filter_map(|r| r.features[j]).collect();
        if observed.is_empty() {
            return Err(DataError::Unimputable(name.clone()));
        }
        let impute = match kind {
            FeatureKind::Continuous => observed.iter().sum::<f64>() / observed.len() as f64,
            FeatureKind::Ordinal => median(&mut observed),
        };
        let n = train.len() as f64;
        let filled = train.records().iter().map(|r| r.features[j].unwrap_or(impute));
        let mean = filled.clone().sum::<f64>() / n;
        let var = filled.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            log::warn!("dropping constant feature {name:?}");
            dropped.push(name.clone());
            continue;
        }
        columns.push(ColumnPlan { name: name.clone(), source_index: j, kind: *kind, impute, mean, sd });
    }
    Ok(PreprocessPlan { columns, dropped })
}

/// Imputes then standardizes. A dataset already carrying this plan's
/// fingerprint is returned unchanged.
pub fn apply_preprocess(plan: &PreprocessPlan, dataset: &HierarchicalDataset) -> Result<HierarchicalDataset> {
    let fp = plan.fingerprint();
    if dataset.preprocessed_by() == Some(fp.as_str()) {
        return Ok(dataset.clone());
    }
    for c in &plan.columns {
        match dataset.feature_names().get(c.source_index) {
            Some(n) if *n == c.name => {}
            _ => return Err(DataError::Schema(format!("dataset lacks feature {:?} at position {}", c.name, c.source_index))),
        }
    }
    let rows = dataset
        .records()
        .iter()
        .map(|r| {
            plan.columns
                .iter()
                .map(|c| Some((r.features[c.source_index].unwrap_or(c.impute) - c.mean) / c.sd))
                .collect()
        })
        .collect();
    let names = plan.columns.iter().map(|c| c.name.clone()).collect();
    let kinds = plan.columns.iter().map(|c| c.kind).collect();
    let mut out = dataset.with_features(names, kinds, rows);
    out.set_preprocessed_by(fp);
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

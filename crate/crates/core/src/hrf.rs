//! Hierarchical random forest: patient, hospital and region forests fitted
//! one after another on the running residual.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, HierarchicalDataset, Matrix};
use crate::forest::{fit_forest, ForestConfig, ForestError, RandomForest};
use crate::persist::{self, PersistError};
use crate::seed::{self, Stream};

const FORMAT: &str = "hybridcp.hrf";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HrfError {
    #[error("invalid hierarchy: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

pub type Result<T> = std::result::Result<T, HrfError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Patient,
    Hospital,
    Region,
}

/// Ordered levels plus a forest configuration per level. The forest seeds
/// are derived from `seed` and the level position; the `seed` field of each
/// level config is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySpec {
    pub levels: Vec<Level>,
    pub patient: ForestConfig,
    pub hospital: ForestConfig,
    pub region: ForestConfig,
    pub seed: u64,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self::with_levels(vec![Level::Patient, Level::Hospital, Level::Region])
    }
}

impl HierarchySpec {
    pub fn with_levels(levels: Vec<Level>) -> Self {
        Self {
            levels,
            patient: ForestConfig::new(100, 15),
            hospital: ForestConfig::new(75, 12),
            region: ForestConfig::new(50, 10),
            seed: 0,
        }
    }

    pub fn patient_only() -> Self {
        Self::with_levels(vec![Level::Patient])
    }

    pub fn patient_hospital() -> Self {
        Self::with_levels(vec![Level::Patient, Level::Hospital])
    }

    pub fn patient_region() -> Self {
        Self::with_levels(vec![Level::Patient, Level::Region])
    }

    pub fn forest(&self, level: Level) -> &ForestConfig {
        match level {
            Level::Patient => &self.patient,
            Level::Hospital => &self.hospital,
            Level::Region => &self.region,
        }
    }

    /// Sets the tree count of every level, handy for small experiments.
    pub fn scaled_trees(mut self, fraction: f64) -> Self {
        for c in [&mut self.patient, &mut self.hospital, &mut self.region] {
            c.n_trees = ((c.n_trees as f64 * fraction).round() as usize).max(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.first() != Some(&Level::Patient) {
            return Err(HrfError::Spec("the first level must be patient".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HrfError::Spec(format!("levels must be strictly ordered patient, hospital, region: {:?}", self.levels)));
        }
        for &l in &self.levels {
            self.forest(l).validate()?;
        }
        Ok(())
    }
}

/// Target-mean encoding of a cluster id: mean training residual and
/// training size. Unseen ids get the global mean and size 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEncoding {
    pub means: BTreeMap<String, (f64, f64)>,
    pub global_mean: f64,
}

impl ClusterEncoding {
    fn fit<'a>(ids: impl Iterator<Item = &'a str>, target: &[f64]) -> Self {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (id, &t) in ids.zip(target) {
            let e = acc.entry(id.to_string()).or_insert((0.0, 0));
            e.0 += t;
            e.1 += 1;
        }
        let global_mean = target.iter().sum::<f64>() / target.len().max(1) as f64;
        let means = acc.into_iter().map(|(k, (s, c))| (k, (s / c as f64, c as f64))).collect();
        Self { means, global_mean }
    }

    pub fn encode(&self, id: &str) -> (f64, f64) {
        self.means.get(id).copied().unwrap_or((self.global_mean, 0.0))
    }

    pub fn is_known(&self, id: &str) -> bool {
        self.means.contains_key(id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLevel {
    pub level: Level,
    pub forest: RandomForest,
    /// Hospital encoding, present for hospital and region levels.
    pub hospital: Option<ClusterEncoding>,
    /// Region encoding, present for the region level.
    pub region: Option<ClusterEncoding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrfModel {
    levels: Vec<FittedLevel>,
    feature_names: Vec<String>,
}

impl HrfModel {
    pub fn levels(&self) -> &[FittedLevel] {
        &self.levels
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn to_json(&self) -> String {
        persist::to_json(FORMAT, VERSION, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(persist::from_json(FORMAT, VERSION, text)?)
    }
}

fn level_matrix(base: &Matrix, dataset: &HierarchicalDataset, hospital: Option<&ClusterEncoding>, region: Option<&ClusterEncoding>) -> Matrix {
    if hospital.is_none() && region.is_none() {
        return base.clone();
    }
    let extra: Vec<Vec<f64>> = dataset
        .records()
        .iter()
        .map(|r| {
            let mut e = Vec::with_capacity(4);
            if let Some(h) = hospital {
                let (m, n) = h.encode(&r.hospital_id);
                e.extend([m, n]);
            }
            if let Some(g) = region {
                let (m, n) = g.encode(&r.region_id);
                e.extend([m, n]);
            }
            e
        })
        .collect();
    base.hstack(&extra)
}

pub fn fit_hrf(train: &HierarchicalDataset, spec: &HierarchySpec) -> Result<HrfModel> {
    spec.validate()?;
    if train.is_empty() {
        return Err(HrfError::Spec("empty training set".into()));
    }
    for r in train.records() {
        if train.hierarchy().get(&r.hospital_id) != Some(&r.region_id) {
            return Err(DataError::NestingViolation {
                hospital: r.hospital_id.clone(),
                first: train.hierarchy().get(&r.hospital_id).cloned().unwrap_or_default(),
                second: r.region_id.clone(),
            }
            .into());
        }
    }
    let base = train.feature_matrix()?;
    let mut residual = train.outcomes();
    let mut levels = Vec::with_capacity(spec.levels.len());
    for (i, &level) in spec.levels.iter().enumerate() {
        let hospital = (level != Level::Patient)
            .then(|| ClusterEncoding::fit(train.records().iter().map(|r| r.hospital_id.as_str()), &residual));
        let region = (level == Level::Region)
            .then(|| ClusterEncoding::fit(train.records().iter().map(|r| r.region_id.as_str()), &residual));
        let x = level_matrix(&base, train, hospital.as_ref(), region.as_ref());
        let config = ForestConfig { seed: seed::derive(spec.seed, Stream::Level, i as u64), ..spec.forest(level).clone() };
        let forest = fit_forest(&x, &residual, &config)?;
        let fitted = forest.predict(&x)?;
        residual.iter_mut().zip(&fitted).for_each(|(r, f)| *r -= f);
        levels.push(FittedLevel { level, forest, hospital, region });
    }
    Ok(HrfModel { levels, feature_names: train.feature_names().to_vec() })
}

/// Per-level contributions, one vector per fitted level.
pub fn level_predictions(model: &HrfModel, dataset: &HierarchicalDataset) -> Result<Vec<Vec<f64>>> {
    if dataset.n_features() != model.n_features() {
        return Err(ForestError::DimensionMismatch { expected: model.n_features(), found: dataset.n_features() }.into());
    }
    let base = dataset.feature_matrix()?;
    model
        .levels
        .iter()
        .map(|l| {
            let x = level_matrix(&base, dataset, l.hospital.as_ref(), l.region.as_ref());
            Ok(l.forest.predict(&x)?)
        })
        .collect()
}

/// Sum of the level contributions, accumulated in level order.
pub fn predict_hrf(model: &HrfModel, dataset: &HierarchicalDataset) -> Result<Vec<f64>> {
    let parts = level_predictions(model, dataset)?;
    let mut out = vec![0.0; dataset.len()];
    for p in &parts {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn small() -> HierarchySpec {
        let mut s = HierarchySpec::default().scaled_trees(0.1);
        s.seed = 3;
        s
    }

    fn data(shift: f64) -> HierarchicalDataset {
        let records = (0..400)
            .map(|i| {
                let h = i % 8;
                let y = if h % 2 == 0 { shift } else { -shift };
                PatientRecord::new(vec![(i * 37 % 101) as f64, (i % 13) as f64], format!("H{h}"), format!("R{}", h % 2), y)
            })
            .collect();
        HierarchicalDataset::from_records(records).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(HierarchySpec::default().validate().is_ok());
        assert!(HierarchySpec::with_levels(vec![Level::Hospital]).validate().is_err());
        assert!(HierarchySpec::with_levels(vec![Level::Patient, Level::Region, Level::Hospital]).validate().is_err());
        assert!(HierarchySpec::with_levels(vec![Level::Patient, Level::Patient]).validate().is_err());
        assert!(HierarchySpec::patient_region().validate().is_ok());
    }

    #[test]
    fn zero_target() {
        let ds = data(0.0);
        let m = fit_hrf(&ds, &small()).unwrap();
        assert_eq!(m.levels().len(), 3);
        assert!(predict_hrf(&m, &ds).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn additivity_and_two_levels() {
        let ds = data(5.0);
        let spec = HierarchySpec { seed: 1, ..HierarchySpec::patient_hospital().scaled_trees(0.1) };
        let m = fit_hrf(&ds, &spec).unwrap();
        assert_eq!(m.levels().len(), 2);
        let parts = level_predictions(&m, &ds).unwrap();
        let total = predict_hrf(&m, &ds).unwrap();
        for i in 0..ds.len() {
            assert_eq!(total[i], 0.0 + parts[0][i] + parts[1][i]);
        }
    }

    #[test]
    fn unseen_hospital_is_finite() {
        let ds = data(5.0);
        let m = fit_hrf(&ds, &small()).unwrap();
        let new = HierarchicalDataset::from_records(vec![
            PatientRecord::new(vec![3.0, 4.0], "NEW", "R9", 0.0),
            PatientRecord::new(vec![3.0, 4.0], "H1", "R1", 0.0),
        ])
        .unwrap();
        assert!(predict_hrf(&m, &new).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn round_trip() {
        let ds = data(2.0);
        let m = fit_hrf(&ds, &small()).unwrap();
        let back = HrfModel::from_json(&m.to_json()).unwrap();
        assert_eq!(predict_hrf(&m, &ds).unwrap(), predict_hrf(&back, &ds).unwrap());
    }
}

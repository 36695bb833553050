use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, Matrix, Result};

/// How a feature is imputed: continuous columns use the mean, ordinal-coded
/// columns the median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    #[default]
    Continuous,
    Ordinal,
}

/// One admission. `None` features are missing cells awaiting imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub features: Vec<Option<f64>>,
    pub hospital_id: String,
    pub region_id: String,
    /// Length of stay in days.
    pub outcome: f64,
    /// Generating noise standard deviation, known only for synthetic rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
}

impl PatientRecord {
    pub fn new(features: Vec<f64>, hospital_id: impl Into<String>, region_id: impl Into<String>, outcome: f64) -> Self {
        Self {
            features: features.into_iter().map(Some).collect(),
            hospital_id: hospital_id.into(),
            region_id: region_id.into(),
            outcome,
            noise_scale: None,
        }
    }
}

/// Records with a verified hospital → region nesting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalDataset {
    records: Vec<PatientRecord>,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
    hierarchy: BTreeMap<String, String>,
    #[serde(default)]
    hospital_attributes: BTreeMap<String, BTreeMap<String, String>>,
    /// Fingerprint of the preprocessing plan already applied, if any.
    #[serde(default)]
    preprocessed_by: Option<String>,
}

impl HierarchicalDataset {
    /// Builds a dataset, checking feature widths, strict nesting and that at
    /// least two hospitals are present.
    pub fn new(records: Vec<PatientRecord>, feature_names: Vec<String>, feature_kinds: Vec<FeatureKind>) -> Result<Self> {
        let ds = Self::build(records, feature_names, feature_kinds)?;
        if ds.hierarchy.len() < 2 {
            return Err(DataError::TooFewHospitals(ds.hierarchy.len()));
        }
        Ok(ds)
    }

    fn build(records: Vec<PatientRecord>, feature_names: Vec<String>, feature_kinds: Vec<FeatureKind>) -> Result<Self> {
        if feature_kinds.len() != feature_names.len() {
            return Err(DataError::Schema(format!(
                "{} feature names but {} kinds",
                feature_names.len(),
                feature_kinds.len()
            )));
        }
        let expected = feature_names.len();
        let mut hierarchy = BTreeMap::new();
        for (row, rec) in records.iter().enumerate() {
            if rec.features.len() != expected {
                return Err(DataError::FeatureLength { row, expected, found: rec.features.len() });
            }
            check_nesting(&mut hierarchy, &rec.hospital_id, &rec.region_id)?;
        }
        Ok(Self {
            records,
            feature_names,
            feature_kinds,
            hierarchy,
            hospital_attributes: BTreeMap::new(),
            preprocessed_by: None,
        })
    }

    /// Convenience constructor naming features `x0, x1, ...`, all continuous.
    pub fn from_records(records: Vec<PatientRecord>) -> Result<Self> {
        let p = records.first().map_or(0, |r| r.features.len());
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Self::new(records, names, vec![FeatureKind::Continuous; p])
    }

    pub fn with_hospital_attributes(mut self, attributes: BTreeMap<String, BTreeMap<String, String>>) -> Self {
        self.hospital_attributes = attributes;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// hospital_id → region_id.
    pub fn hierarchy(&self) -> &BTreeMap<String, String> {
        &self.hierarchy
    }

    pub fn hospital_attributes(&self) -> &BTreeMap<String, BTreeMap<String, String>> {
        &self.hospital_attributes
    }

    pub fn preprocessed_by(&self) -> Option<&str> {
        self.preprocessed_by.as_deref()
    }

    pub(crate) fn set_preprocessed_by(&mut self, fingerprint: String) {
        self.preprocessed_by = Some(fingerprint);
    }

    pub fn n_hospitals(&self) -> usize {
        self.hierarchy.len()
    }

    pub fn regions(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.hierarchy.values().map(String::as_str).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// Dense feature matrix; fails if any cell is still missing.
    pub fn feature_matrix(&self) -> Result<Matrix> {
        let p = self.n_features();
        let mut data = Vec::with_capacity(self.len() * p);
        for (row, rec) in self.records.iter().enumerate() {
            for (j, v) in rec.features.iter().enumerate() {
                match v {
                    Some(x) => data.push(*x),
                    None => {
                        return Err(DataError::MissingValue { feature: self.feature_names[j].clone(), row });
                    }
                }
            }
        }
        Ok(Matrix::new(data, self.len(), p))
    }

    /// Rows at `indices`, in that order. Nesting carries over; the
    /// two-hospital minimum is not re-checked for subsets.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut records = Vec::with_capacity(indices.len());
        for &i in indices {
            let rec = self.records.get(i).ok_or(DataError::IndexOutOfRange { index: i, len: self.len() })?;
            records.push(rec.clone());
        }
        let mut ds = Self::build(records, self.feature_names.clone(), self.feature_kinds.clone())?;
        ds.hospital_attributes = self
            .hospital_attributes
            .iter()
            .filter(|(h, _)| ds.hierarchy.contains_key(*h))
            .map(|(h, a)| (h.clone(), a.clone()))
            .collect();
        ds.preprocessed_by = self.preprocessed_by.clone();
        Ok(ds)
    }

    /// Replaces features wholesale (used by preprocessing).
    pub(crate) fn with_features(&self, names: Vec<String>, kinds: Vec<FeatureKind>, rows: Vec<Vec<Option<f64>>>) -> Self {
        let records = self
            .records
            .iter()
            .zip(rows)
            .map(|(r, features)| PatientRecord { features, ..r.clone() })
            .collect();
        Self {
            records,
            feature_names: names,
            feature_kinds: kinds,
            hierarchy: self.hierarchy.clone(),
            hospital_attributes: self.hospital_attributes.clone(),
            preprocessed_by: self.preprocessed_by.clone(),
        }
    }

    /// Copy with one outcome replaced. Intended for perturbation tests.
    pub fn with_outcome(&self, row: usize, outcome: f64) -> Self {
        let mut out = self.clone();
        out.records[row].outcome = outcome;
        out
    }

    /// Group label of each record under `attribute`: `hospital`, `region`, or
    /// a named hospital attribute. `None` when the attribute is unknown.
    pub fn group_labels(&self, attribute: &str) -> Option<Vec<String>> {
        match attribute {
            "hospital" => Some(self.records.iter().map(|r| r.hospital_id.clone()).collect()),
            "region" => Some(self.records.iter().map(|r| r.region_id.clone()).collect()),
            attr => {
                let known = self.hospital_attributes.values().any(|a| a.contains_key(attr));
                if !known {
                    return None;
                }
                Some(
                    self.records
                        .iter()
                        .map(|r| {
                            self.hospital_attributes
                                .get(&r.hospital_id)
                                .and_then(|a| a.get(attr))
                                .cloned()
                                .unwrap_or_else(|| "unknown".to_string())
                        })
                        .collect(),
                )
            }
        }
    }
}

pub(crate) fn check_nesting(hierarchy: &mut BTreeMap<String, String>, hospital: &str, region: &str) -> Result<()> {
    match hierarchy.get(hospital) {
        Some(existing) if existing != region => Err(DataError::NestingViolation {
            hospital: hospital.to_string(),
            first: existing.clone(),
            second: region.to_string(),
        }),
        Some(_) => Ok(()),
        None => {
            hierarchy.insert(hospital.to_string(), region.to_string());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(h: &str, r: &str, y: f64) -> PatientRecord {
        PatientRecord::new(vec![y], h, r, y)
    }

    #[test]
    fn nesting_violation_detected() {
        let err = HierarchicalDataset::from_records(vec![rec("H1", "R1", 1.0), rec("H1", "R2", 2.0), rec("H2", "R1", 3.0)]).unwrap_err();
        assert!(matches!(err, DataError::NestingViolation { .. }));
    }

    #[test]
    fn needs_two_hospitals() {
        let err = HierarchicalDataset::from_records(vec![rec("H1", "R1", 1.0), rec("H1", "R1", 2.0)]).unwrap_err();
        assert!(matches!(err, DataError::TooFewHospitals(1)));
    }

    #[test]
    fn subset_keeps_nesting_and_order() {
        let ds = HierarchicalDataset::from_records(vec![rec("H1", "R1", 1.0), rec("H2", "R1", 2.0), rec("H3", "R2", 3.0)]).unwrap();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.outcomes(), vec![3.0, 1.0]);
        assert_eq!(sub.hierarchy().len(), 2);
        assert!(ds.subset(&[5]).is_err());
    }

    #[test]
    fn missing_cell_blocks_matrix() {
        let mut r = rec("H1", "R1", 1.0);
        r.features[0] = None;
        let ds = HierarchicalDataset::from_records(vec![r, rec("H2", "R1", 2.0)]).unwrap();
        assert!(matches!(ds.feature_matrix(), Err(DataError::MissingValue { row: 0, .. })));
    }
}

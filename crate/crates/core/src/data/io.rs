use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::check_nesting;
use super::{DataError, FeatureKind, HierarchicalDataset, PatientRecord, Result};

/// Column roles for a dataset CSV.
///
/// ```toml
/// outcome = "los"
/// hospital = "hospital"
/// region = "region"
/// features = [{ name = "age", kind = "continuous" }, { name = "severity", kind = "ordinal" }]
/// attributes = ["bed_size"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub outcome: String,
    pub hospital: String,
    pub region: String,
    pub features: Vec<ColumnSpec>,
    /// Hospital-level descriptive columns, constant within a hospital.
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default)]
    pub kind: FeatureKind,
}

impl Schema {
    /// Default layout: `features..., hospital, region, outcome`, all features
    /// continuous.
    pub fn from_header(header: &[&str]) -> Result<Self> {
        if header.len() < 4 {
            return Err(DataError::Schema(format!(
                "default layout needs at least one feature plus hospital, region, outcome; got {} columns",
                header.len()
            )));
        }
        let k = header.len();
        Ok(Self {
            outcome: header[k - 1].to_string(),
            hospital: header[k - 3].to_string(),
            region: header[k - 2].to_string(),
            features: header[..k - 3]
                .iter()
                .map(|n| ColumnSpec { name: n.to_string(), kind: FeatureKind::Continuous })
                .collect(),
            attributes: Vec::new(),
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(s).map_err(|e| DataError::Schema(e.to_string()))?;
        if schema.features.is_empty() {
            return Err(DataError::Schema("at least one feature column required".into()));
        }
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

/// Reads a dataset CSV. Empty feature cells become missing values; the
/// outcome must be present and nonnegative on every row.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<HierarchicalDataset> {
    load_csv_from_reader(File::open(path)?, schema)
}

pub fn load_csv_from_reader<R: Read>(reader: R, schema: Option<&Schema>) -> Result<HierarchicalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let default_schema;
    let schema = match schema {
        Some(s) => s,
        None => {
            let refs: Vec<&str> = header.iter().map(String::as_str).collect();
            default_schema = Schema::from_header(&refs)?;
            &default_schema
        }
    };
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
    let outcome_col = col(&schema.outcome)?;
    let hospital_col = col(&schema.hospital)?;
    let region_col = col(&schema.region)?;
    let feature_cols = schema.features.iter().map(|f| col(&f.name)).collect::<Result<Vec<_>>>()?;
    let attribute_cols = schema.attributes.iter().map(|a| col(a)).collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut hierarchy = BTreeMap::new();
    let mut attributes: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| DataError::Parse { line, message: e.to_string() })?;
        if row.len() != header.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let parse = |c: usize| -> Result<Option<f64>> {
            let cell = &row[c];
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<f64>().map(Some).map_err(|_| DataError::Parse {
                line,
                message: format!("column {:?}: cannot parse {cell:?} as a number", header[c]),
            })
        };
        let outcome = parse(outcome_col)?.ok_or(DataError::MissingOutcome { line })?;
        if outcome < 0.0 || !outcome.is_finite() {
            return Err(DataError::NegativeOutcome { line, value: outcome });
        }
        let hospital = row[hospital_col].to_string();
        let region = row[region_col].to_string();
        if hospital.is_empty() || region.is_empty() {
            return Err(DataError::Parse { line, message: "empty hospital or region id".into() });
        }
        check_nesting(&mut hierarchy, &hospital, &region)?;
        let features = feature_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        for (name, &c) in schema.attributes.iter().zip(&attribute_cols) {
            let value = row[c].to_string();
            let entry = attributes.entry(hospital.clone()).or_default();
            match entry.get(name) {
                Some(prev) if *prev != value => {
                    return Err(DataError::AttributeConflict {
                        hospital,
                        attribute: name.clone(),
                        first: prev.clone(),
                        second: value,
                    });
                }
                Some(_) => {}
                None => {
                    entry.insert(name.clone(), value);
                }
            }
        }
        records.push(PatientRecord { features, hospital_id: hospital, region_id: region, outcome, noise_scale: None });
    }
    let names = schema.features.iter().map(|f| f.name.clone()).collect();
    let kinds = schema.features.iter().map(|f| f.kind).collect();
    Ok(HierarchicalDataset::new(records, names, kinds)?.with_hospital_attributes(attributes))
}

/// Writes `features..., hospital, region, outcome[, attributes...]` and
/// returns the matching schema.
pub fn write_csv<W: Write>(dataset: &HierarchicalDataset, writer: W) -> Result<Schema> {
    let attr_names: Vec<String> = {
        let mut names: Vec<String> = dataset.hospital_attributes().values().flat_map(|a| a.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = dataset.feature_names().to_vec();
    header.extend(["hospital", "region", "outcome"].map(String::from));
    header.extend(attr_names.iter().cloned());
    w.write_record(&header).map_err(csv_io)?;
    for rec in dataset.records() {
        let mut fields: Vec<String> = rec.features.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        fields.push(rec.hospital_id.clone());
        fields.push(rec.region_id.clone());
        fields.push(rec.outcome.to_string());
        for a in &attr_names {
            fields.push(
                dataset
                    .hospital_attributes()
                    .get(&rec.hospital_id)
                    .and_then(|m| m.get(a))
                    .cloned()
                    .unwrap_or_default(),
            );
        }
        w.write_record(&fields).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(Schema {
        outcome: "outcome".into(),
        hospital: "hospital".into(),
        region: "region".into(),
        features: dataset
            .feature_names()
            .iter()
            .zip(dataset.feature_kinds())
            .map(|(n, k)| ColumnSpec { name: n.clone(), kind: *k })
            .collect(),
        attributes: attr_names,
    })
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::other(e.to_string()))
}

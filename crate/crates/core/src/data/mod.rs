//! Clustered regression data: patients nested in hospitals nested in regions.

mod dataset;
mod icc;
mod io;
mod matrix;
mod preprocess;
mod split;
mod synthetic;

pub use dataset::{FeatureKind, HierarchicalDataset, PatientRecord};
pub use icc::{icc_decomposition, VarianceShares};
pub use io::{load_csv, load_csv_from_reader, write_csv, ColumnSpec, Schema};
pub use matrix::Matrix;
pub use preprocess::{apply_preprocess, fit_preprocess, ColumnPlan, PreprocessPlan};
pub use split::{outcome_quintiles, stratified_kfold, SplitPlan};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing outcome")]
    MissingOutcome { line: usize },
    #[error("line {line}: outcome {value} is negative")]
    NegativeOutcome { line: usize, value: f64 },
    #[error("hospital {hospital:?} is nested in both {first:?} and {second:?}")]
    NestingViolation { hospital: String, first: String, second: String },
    #[error("record {row} has {found} features, expected {expected}")]
    FeatureLength { row: usize, expected: usize, found: usize },
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("need at least 2 hospitals, found {0}")]
    TooFewHospitals(usize),
    #[error("feature {0:?} has no observed values")]
    Unimputable(String),
    #[error("missing value in feature {feature:?} at row {row}; apply a preprocessing plan first")]
    MissingValue { feature: String, row: usize },
    #[error("hospital {hospital:?} attribute {attribute:?} has conflicting values {first:?} and {second:?}")]
    AttributeConflict { hospital: String, attribute: String, first: String, second: String },
    #[error("stratification: {0}")]
    Stratification(String),
    #[error("variance decomposition: {0}")]
    Decomposition(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

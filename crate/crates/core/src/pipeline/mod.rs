//! Config-driven cross-validated runs of the conformal, Bayesian and hybrid
//! interval methods, plus report and artifact emission.

mod config;
mod experiment;
mod fold;
mod report;
mod subgroup;

use thiserror::Error;

pub use config::{alpha_key, CsvSource, DataSource, ExperimentConfig, Method, SigmaSource};
pub use experiment::{run_experiment, sweep, sweep_csv, write_artifacts, GateStatus, Provenance, RunOutput, SweepParam, ARTIFACTS};
pub use fold::{fold_seed, run_fold, FoldArtifacts, FoldOutput, FoldResult, Prediction, SigmaSummary};
pub use report::{FoldEntry, RunReport, Summary, REPORT_FORMAT};
pub use subgroup::{subgroup_report, GroupStat, SubgroupReport};

use crate::bayes::BayesError;
use crate::data::DataError;
use crate::hrf::HrfError;
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("model error: {0}")]
    Model(String),
    #[error("convergence gate failed in fold(s) {folds:?}; set allow_unconverged to report anyway")]
    ConvergenceGate { folds: Vec<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Report(String),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Model(_) | PipelineError::Report(_) => 3,
            PipelineError::ConvergenceGate { .. } => 4,
            PipelineError::Io(_) => 1,
        }
    }
}

impl From<HrfError> for PipelineError {
    fn from(e: HrfError) -> Self {
        match e {
            HrfError::Data(d) => PipelineError::Data(d),
            other => PipelineError::Model(other.to_string()),
        }
    }
}

impl From<BayesError> for PipelineError {
    fn from(e: BayesError) -> Self {
        PipelineError::Model(e.to_string())
    }
}

impl From<MetricError> for PipelineError {
    fn from(e: MetricError) -> Self {
        PipelineError::Model(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

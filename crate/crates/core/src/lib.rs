//! Hybrid Bayesian-conformal prediction intervals for clustered regression data.
//!
//! The crate is organised around the stages of an experiment run:
//!
//! - [`data`]: records nested in hospitals and regions, CSV ingestion,
//!   preprocessing, split protocols, a synthetic generator and a nested ANOVA
//!   variance decomposition.
//! - [`forest`]: CART regression trees and bagged random forests.
//! - [`hrf`]: the sequential patient / hospital / region residual forest.
//! - [`bayes`]: a hierarchical normal calibrator fitted by MCMC, convergence
//!   diagnostics, posterior predictive spread and isotonic recalibration.
//! - [`conformal`]: split-conformal calibration (pooled and cluster
//!   sub-sampled) with optional uncertainty-weighted scores.
//! - [`metrics`]: coverage, widths, adaptation, calibration and scoring rules.
//! - [`pipeline`]: config-driven cross-validated runs and report emission.
//!
//! Data-parallel loops (trees, chains, folds, sub-sampling replicates) go
//! through [`par`], which uses rayon when the `parallel` feature is enabled
//! and plain iteration otherwise. Results never depend on the schedule.

pub mod bayes;
pub mod conformal;
pub mod data;
pub mod forest;
pub mod hrf;
pub mod metrics;
pub mod par;
pub mod persist;
pub mod pipeline;
pub mod seed;

pub use bayes::{BayesModelSpec, ConvergenceReport, IsotonicMap, PosteriorSamples};
pub use conformal::{CalibrationMode, CalibrationStrategy, ConformalCalibration, PredictionInterval};
pub use data::{HierarchicalDataset, PatientRecord, SplitPlan, SyntheticConfig};
pub use forest::{ForestConfig, RandomForest};
pub use hrf::{HierarchySpec, HrfModel, Level};
pub use metrics::{EvalRow, MetricReport};
pub use pipeline::{ExperimentConfig, RunReport};

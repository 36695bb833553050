use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::bayes::{BayesModelSpec, PredictiveMethod};
use crate::conformal::{CalibrationMode, CalibrationStrategy};
use crate::data::{self, HierarchicalDataset, Schema, SyntheticConfig};
use crate::hrf::HierarchySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `ŷ ± q̂` from unweighted scores.
    Conformal,
    /// `ŷ_bayes ± z·σ_pred` from the posterior predictive alone.
    Bayesian,
    /// `ŷ ± q̂·max(σ^γ, ε)` from uncertainty-weighted scores.
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Conformal, Method::Bayesian, Method::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Method::Conformal => "conformal",
            Method::Bayesian => "bayesian",
            Method::Hybrid => "hybrid",
        }
    }
}

/// Which uncertainty weights the hybrid scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    Raw,
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Schema file; without one the header is read as
    /// `outcome, hospital_id, region_id, features...`.
    #[serde(default)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(CsvSource),
}

impl DataSource {
    pub fn load(&self) -> Result<HierarchicalDataset> {
        match self {
            DataSource::Synthetic(c) => Ok(data::generate_synthetic(c)?),
            DataSource::Csv(c) => {
                let schema = c.schema.as_ref().map(Schema::load).transpose()?;
                Ok(data::load_csv(&c.path, schema.as_ref())?)
            }
        }
    }
}

/// Everything one run needs. Read from TOML; unknown keys are rejected.
///
/// The `seed` fields inside `hierarchy` and `bayes` are ignored: every fold
/// derives its own from the master `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub hierarchy: HierarchySpec,
    #[serde(default)]
    pub bayes: BayesModelSpec,
    #[serde(default)]
    pub strategy: CalibrationStrategy,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Not echoed into reports, so the same run written to two places
    /// produces identical files.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sigma_source: SigmaSource,
    /// Multiplies the posterior predictive σ before use. Values below 1
    /// emulate an overconfident Bayesian model.
    #[serde(default = "one")]
    pub raw_sigma_scale: f64,
    #[serde(default)]
    pub predictive: PredictiveMethod,
    /// Fraction of calibration rows reserved for the isotonic fit; the
    /// conformal quantiles use only the remaining rows, which keeps the
    /// weighted scores exchangeable with test scores. With 0 both use every
    /// calibration row.
    #[serde(default = "default_holdout")]
    pub isotonic_holdout: f64,
    /// Lower bound applied to exported interval endpoints. Metrics always
    /// use the unclipped intervals.
    #[serde(default)]
    pub clip_floor: Option<f64>,
    /// Report metrics even when a Bayesian fit fails the convergence gate.
    #[serde(default)]
    pub allow_unconverged: bool,
    /// Hospital attributes (or `hospital` / `region`) to break coverage down by.
    #[serde(default)]
    pub subgroups: Vec<String>,
    #[serde(default = "default_min_group")]
    pub min_group_size: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.10, 0.20]
}
fn default_gamma() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_folds() -> usize {
    5
}
fn one() -> f64 {
    1.0
}
fn default_holdout() -> f64 {
    0.5
}
fn default_min_group() -> usize {
    30
}

impl ExperimentConfig {
    /// A config with defaults everywhere except the data source.
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            hierarchy: HierarchySpec::default(),
            bayes: BayesModelSpec::default(),
            strategy: CalibrationStrategy::default(),
            alphas: default_alphas(),
            gamma: default_gamma(),
            epsilon: default_epsilon(),
            methods: default_methods(),
            folds: default_folds(),
            seed: 0,
            output_dir: None,
            sigma_source: SigmaSource::default(),
            raw_sigma_scale: 1.0,
            predictive: PredictiveMethod::default(),
            isotonic_holdout: default_holdout(),
            clip_floor: None,
            allow_unconverged: false,
            subgroups: Vec::new(),
            min_group_size: default_min_group(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative CSV and schema paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let (DataSource::Csv(c), Some(dir)) = (&mut config.data, path.parent()) {
            c.path = dir.join(&c.path);
            c.schema = c.schema.as_ref().map(|s| dir.join(s));
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn uses(&self, method: Method) -> bool {
        self.methods.contains(&method)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.methods.is_empty() {
            return bad("method set is empty".into());
        }
        if self.alphas.is_empty() {
            return bad("alpha list is empty".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha must lie in (0, 1), got {a}"));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if !(self.raw_sigma_scale > 0.0 && self.raw_sigma_scale.is_finite()) {
            return bad(format!("raw_sigma_scale must be positive, got {}", self.raw_sigma_scale));
        }
        if !(0.0..1.0).contains(&self.isotonic_holdout) {
            return bad(format!("isotonic_holdout must lie in [0, 1), got {}", self.isotonic_holdout));
        }
        if let PredictiveMethod::MonteCarlo { replicates: 0 } = self.predictive {
            return bad("predictive replicates must be positive".into());
        }
        CalibrationMode::Weighted { gamma: self.gamma, epsilon: self.epsilon }
            .validate()
            .and_then(|_| self.strategy.validate())
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.hierarchy.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.bayes.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let DataSource::Synthetic(c) = &self.data {
            c.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Map key for an α value.
pub fn alpha_key(alpha: f64) -> String {
    format!("{alpha}")
}

//! CART regression trees and bagged random forests.

mod tree;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::persist::{self, PersistError};
use crate::seed::{self, Stream};
use crate::par;

pub use tree::{best_split, Node, RegressionTree, SplitCandidate};

const FORMAT: &str = "hybridcp.random_forest";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("cannot fit on {rows} rows with min_samples_leaf = {min_leaf}")]
    Empty { rows: usize, min_leaf: usize },
    #[error("feature matrix has {x_rows} rows but target has {y_len}")]
    LengthMismatch { x_rows: usize, y_len: usize },
    #[error("model expects {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("non-finite value in training data")]
    NonFinite,
    #[error(transparent)]
    Persist(#[from] PersistError),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 15, min_samples_leaf: 5, mtry: None, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn new(n_trees: usize, max_depth: usize) -> Self {
        Self { n_trees, max_depth, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(ForestError::Config("n_trees must be at least 1".into()));
        }
        if self.max_depth < 1 {
            return Err(ForestError::Config("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(ForestError::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(ForestError::Config("mtry must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_mtry(&self, n_features: usize) -> Result<usize> {
        match self.mtry {
            Some(m) if m > n_features => Err(ForestError::Config(format!("mtry {m} exceeds {n_features} features"))),
            Some(m) => Ok(m),
            None => Ok((n_features / 3).max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    config: ForestConfig,
    n_features: usize,
}

impl RandomForest {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Per-row mean of the tree predictions.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_rows() > 0 && x.n_cols() != self.n_features {
            return Err(ForestError::DimensionMismatch { expected: self.n_features, found: x.n_cols() });
        }
        let k = self.trees.len() as f64;
        Ok(par::map_range(x.n_rows(), |i| {
            let row = x.row(i);
            self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k
        }))
    }

    pub fn to_json(&self) -> String {
        persist::to_json(FORMAT, VERSION, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(persist::from_json(FORMAT, VERSION, text)?)
    }
}

pub fn fit_forest(x: &Matrix, y: &[f64], config: &ForestConfig) -> Result<RandomForest> {
    config.validate()?;
    let n = x.n_rows();
    if n != y.len() {
        return Err(ForestError::LengthMismatch { x_rows: n, y_len: y.len() });
    }
    if n == 0 || n < 2 * config.min_samples_leaf {
        return Err(ForestError::Empty { rows: n, min_leaf: config.min_samples_leaf });
    }
    if y.iter().any(|v| !v.is_finite()) || (0..n).any(|i| x.row(i).iter().any(|v| !v.is_finite())) {
        return Err(ForestError::NonFinite);
    }
    let p = x.n_cols();
    let params = tree::GrowParams {
        max_depth: config.max_depth,
        min_samples_leaf: config.min_samples_leaf,
        mtry: config.resolved_mtry(p)?,
    };
    let trees = par::map_range(config.n_trees, |t| {
        let mut rng = seed::child_rng(config.seed, Stream::Tree, t as u64);
        let mut rows: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        RegressionTree::grow(x, y, &mut rows, &params, &mut rng)
    });
    Ok(RandomForest { trees, config: config.clone(), n_features: p })
}

pub fn predict_forest(model: &RandomForest, x: &Matrix) -> Result<Vec<f64>> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn constant_target() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect::<Vec<_>>());
        let f = fit_forest(&x, &[5.0; 20], &ForestConfig::new(10, 5)).unwrap();
        assert!(f.predict(&x).unwrap().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn forced_split() {
        let cfg = ForestConfig { n_trees: 1, max_depth: 1, min_samples_leaf: 1, bootstrap: false, ..Default::default() };
        let x = m(&[&[0.0], &[1.0]]);
        let f = fit_forest(&x, &[0.0, 10.0], &cfg).unwrap();
        assert_eq!(f.predict(&x).unwrap(), vec![0.0, 10.0]);
        assert_eq!(f.trees()[0].nodes().len(), 3);
    }

    #[test]
    fn errors() {
        let x = m(&[&[0.0], &[1.0]]);
        assert!(matches!(fit_forest(&x, &[0.0, 1.0], &ForestConfig::default()), Err(ForestError::Empty { .. })));
        let cfg = ForestConfig { mtry: Some(2), min_samples_leaf: 1, ..Default::default() };
        assert!(matches!(fit_forest(&x, &[0.0, 1.0], &cfg), Err(ForestError::Config(_))));
        let cfg = ForestConfig { min_samples_leaf: 1, n_trees: 2, ..Default::default() };
        let f = fit_forest(&x, &[0.0, 1.0], &cfg).unwrap();
        assert!(matches!(f.predict(&m(&[&[0.0, 1.0]])), Err(ForestError::DimensionMismatch { .. })));
        assert!(f.predict(&Matrix::zeros(0, 1)).unwrap().is_empty());
    }

    #[test]
    fn default_mtry() {
        let c = ForestConfig::default();
        assert_eq!(c.resolved_mtry(1).unwrap(), 1);
        assert_eq!(c.resolved_mtry(6).unwrap(), 2);
        assert_eq!(c.resolved_mtry(10).unwrap(), 3);
    }
}

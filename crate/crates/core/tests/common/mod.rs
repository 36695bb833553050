#![allow(dead_code)]

use hybridcp::pipeline::{DataSource, ExperimentConfig};
use hybridcp::{BayesModelSpec, HierarchySpec, SyntheticConfig};

/// Small forests and short chains so a full cross-validated run takes a
/// few seconds.
pub fn fast_config(n_patients: usize, seed: u64) -> ExperimentConfig {
    let data = SyntheticConfig { n_patients, n_hospitals: 30, seed, ..Default::default() };
    let mut c = ExperimentConfig::new(DataSource::Synthetic(data));
    c.hierarchy = HierarchySpec::default().scaled_trees(0.2);
    c.bayes = BayesModelSpec { warmup: 200, draws: 100, ..Default::default() };
    c.alphas = vec![0.05, 0.1];
    c.seed = seed;
    c.allow_unconverged = true;
    c
}

/// A sampler budget far too short to pass the R̂/ESS gate.
pub fn starved_bayes() -> BayesModelSpec {
    BayesModelSpec { warmup: 0, draws: 100, rotation: false, ..Default::default() }
}

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Method};
use super::fold::{fold_seed, run_fold, Prediction};
use super::report::{aggregate, FoldEntry, RunReport, REPORT_FORMAT};
use super::subgroup::subgroup_report;
use super::{PipelineError, Result};
use crate::conformal::clip_interval;
use crate::conformal::PredictionInterval;
use crate::data::{self, HierarchicalDataset};
use crate::par;
use crate::seed::{self, Stream};

/// Files written by [`write_artifacts`].
pub const ARTIFACTS: [&str; 4] = ["report.json", "metrics.csv", "intervals.csv", "provenance.json"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStatus {
    pub passed: bool,
    /// Metrics were reported despite a failed gate.
    pub overridden: bool,
    pub failing_folds: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub predictions: Vec<Prediction>,
    pub dataset: HierarchicalDataset,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub format: String,
    pub crate_version: String,
    pub parallel: bool,
    pub config_hash: String,
    pub dataset_hash: String,
    pub master_seed: u64,
    pub split_seed: u64,
    pub fold_seeds: Vec<u64>,
    pub split_fingerprints: Vec<String>,
}

/// Loads the data, runs every fold and aggregates.
///
/// A fold that errors is recorded as failed and the remaining folds are
/// still reported. When a Bayesian fit misses the convergence gate the run
/// returns [`PipelineError::ConvergenceGate`] unless `allow_unconverged`
/// is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let dataset = config.data.load()?;
    for attr in &config.subgroups {
        if dataset.group_labels(attr).is_none() {
            return Err(PipelineError::Config(format!("unknown grouping attribute {attr:?}")));
        }
    }
    let split_seed = seed::derive(config.seed, Stream::Split, 0);
    let plans = data::stratified_kfold(&dataset, config.folds, split_seed)?;
    let outputs = par::map_range(plans.len(), |f| run_fold(config, &dataset, &plans[f], f));

    let mut folds = Vec::with_capacity(plans.len());
    let mut predictions = Vec::new();
    for (f, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                predictions.extend(o.predictions);
                folds.push(FoldEntry::Completed(Box::new(o.result)));
            }
            Err(e) => {
                log::error!("fold {}: {e}", f + 1);
                folds.push(FoldEntry::Failed { fold: f, split_fingerprint: plans[f].fingerprint(), error: e.to_string() });
            }
        }
    }

    let failing_folds: Vec<usize> =
        folds.iter().filter_map(FoldEntry::completed).filter(|r| !r.convergence.pass).map(|r| r.fold).collect();
    let gate = GateStatus { passed: failing_folds.is_empty(), overridden: !failing_folds.is_empty(), failing_folds };
    if !gate.passed && !config.allow_unconverged {
        return Err(PipelineError::ConvergenceGate { folds: gate.failing_folds.iter().map(|f| f + 1).collect() });
    }

    let subgroups = config
        .subgroups
        .iter()
        .map(|a| subgroup_report(&predictions, &dataset, a, config.min_group_size))
        .collect::<Result<Vec<_>>>()?;

    let config_hash = config.hash();
    let report = RunReport {
        format: REPORT_FORMAT.to_string(),
        config: config.clone(),
        config_hash: config_hash.clone(),
        n_rows: dataset.len(),
        n_hospitals: dataset.n_hospitals(),
        n_regions: dataset.regions().len(),
        aggregate: aggregate(&folds),
        folds,
        gate,
        subgroups,
    };
    let mut buf = Vec::new();
    data::write_csv(&dataset, &mut buf)?;
    let provenance = Provenance {
        format: "hybridcp.provenance/1".to_string(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        parallel: par::is_parallel(),
        config_hash,
        dataset_hash: hex::encode(Sha256::digest(&buf)),
        master_seed: config.seed,
        split_seed,
        fold_seeds: (0..plans.len()).map(|f| fold_seed(config.seed, f)).collect(),
        split_fingerprints: plans.iter().map(|p| p.fingerprint()).collect(),
    };
    Ok(RunOutput { report, predictions, dataset, provenance })
}

/// Writes the report, the flat metrics table, per-row intervals and the
/// provenance record into `dir`.
pub fn write_artifacts(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), output.report.to_json())?;
    std::fs::write(dir.join("metrics.csv"), output.report.to_csv())?;
    std::fs::write(dir.join("intervals.csv"), intervals_csv(&output.predictions, output.report.config.clip_floor))?;
    let mut prov = serde_json::to_string_pretty(&output.provenance).expect("provenance serializes");
    prov.push('\n');
    std::fs::write(dir.join("provenance.json"), prov)?;
    Ok(())
}

fn intervals_csv(predictions: &[Prediction], clip_floor: Option<f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "fold", "row", "method", "alpha", "y", "center", "lower", "upper", "covered", "sigma_raw", "sigma_cal",
    ])
    .expect("in-memory write");
    for p in predictions {
        let iv = PredictionInterval { lower: p.lower, upper: p.upper, center: p.center, half_width: (p.upper - p.lower) / 2.0, degenerate: false };
        let iv = clip_floor.map_or(iv, |f| clip_interval(iv, f));
        w.write_record([
            (p.fold + 1).to_string(),
            p.row.to_string(),
            p.method.name().to_string(),
            p.alpha.to_string(),
            p.y.to_string(),
            p.center.to_string(),
            iv.lower.to_string(),
            iv.upper.to_string(),
            u8::from(p.covered()).to_string(),
            p.sigma_raw.to_string(),
            p.sigma_cal.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Gamma,
    Epsilon,
    RawSigmaScale,
    IsotonicHoldout,
    Seed,
    Folds,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
            SweepParam::Epsilon => "epsilon",
            SweepParam::RawSigmaScale => "raw_sigma_scale",
            SweepParam::IsotonicHoldout => "isotonic_holdout",
            SweepParam::Seed => "seed",
            SweepParam::Folds => "folds",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => SweepParam::Alpha,
            "gamma" => SweepParam::Gamma,
            "epsilon" => SweepParam::Epsilon,
            "raw_sigma_scale" => SweepParam::RawSigmaScale,
            "isotonic_holdout" => SweepParam::IsotonicHoldout,
            "seed" => SweepParam::Seed,
            "folds" => SweepParam::Folds,
            other => return Err(PipelineError::Config(format!("cannot sweep {other:?}"))),
        })
    }
}

/// Runs `config` once per value of `param`. An α sweep is a single run,
/// since every fold already recalibrates per α.
pub fn sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<(String, RunOutput)>> {
    if values.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one value".into()));
    }
    if param == SweepParam::Alpha {
        let c = ExperimentConfig { alphas: values.to_vec(), ..config.clone() };
        return Ok(vec![("all".to_string(), run_experiment(&c)?)]);
    }
    let integer = |v: f64| {
        if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
            Ok(v as u64)
        } else {
            Err(PipelineError::Config(format!("{param} needs a nonnegative integer, got {v}")))
        }
    };
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = config.clone();
        match param {
            SweepParam::Alpha => unreachable!("handled above"),
            SweepParam::Gamma => c.gamma = v,
            SweepParam::Epsilon => c.epsilon = v,
            SweepParam::RawSigmaScale => c.raw_sigma_scale = v,
            SweepParam::IsotonicHoldout => c.isotonic_holdout = v,
            SweepParam::Seed => c.seed = integer(v)?,
            SweepParam::Folds => c.folds = integer(v)? as usize,
        }
        out.push((v.to_string(), run_experiment(&c)?));
    }
    Ok(out)
}

/// One row per swept value, method and α with mean coverage and width.
pub fn sweep_csv(param: SweepParam, runs: &[(String, RunOutput)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["param", "value", "method", "alpha", "coverage_mean", "coverage_sd", "width_mean", "width_sd"])
        .expect("in-memory write");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (value, run) in runs {
        for (method, by_alpha) in &run.report.aggregate {
            let mut alphas: Vec<(&String, &BTreeMap<String, super::Summary>)> = by_alpha.iter().collect();
            alphas.sort_by(|a, b| a.0.parse::<f64>().unwrap_or(0.0).total_cmp(&b.0.parse::<f64>().unwrap_or(0.0)));
            for (alpha, m) in alphas {
                let (c, wd) = (m.get("coverage"), m.get("mean_width"));
                w.write_record([
                    param.name().to_string(),
                    value.clone(),
                    Method::name(*method).to_string(),
                    alpha.clone(),
                    cell(c.and_then(|s| s.mean)),
                    cell(c.and_then(|s| s.sd)),
                    cell(wd.and_then(|s| s.mean)),
                    cell(wd.and_then(|s| s.sd)),
                ])
                .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

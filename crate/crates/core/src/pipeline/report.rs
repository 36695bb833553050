use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::experiment::GateStatus;
use super::fold::FoldResult;
use super::subgroup::SubgroupReport;
use super::{PipelineError, Result};

pub const REPORT_FORMAT: &str = "hybridcp.run_report/1";

/// Mean and sample standard deviation of one metric across folds. Folds
/// where the metric is undefined are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: None, sd: None, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self { mean: Some(mean), sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldEntry {
    Completed(Box<FoldResult>),
    Failed { fold: usize, split_fingerprint: String, error: String },
}

impl FoldEntry {
    pub fn completed(&self) -> Option<&FoldResult> {
        match self {
            FoldEntry::Completed(r) => Some(r),
            FoldEntry::Failed { .. } => None,
        }
    }
}

/// Per-fold results, cross-fold summaries and the settings that produced
/// them. Contains no timestamps or paths, so equal inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub n_rows: usize,
    pub n_hospitals: usize,
    pub n_regions: usize,
    pub folds: Vec<FoldEntry>,
    /// Method → α → metric → summary over completed folds.
    pub aggregate: BTreeMap<Method, BTreeMap<String, BTreeMap<String, Summary>>>,
    pub gate: GateStatus,
    pub subgroups: Vec<SubgroupReport>,
}

pub(crate) fn aggregate(folds: &[FoldEntry]) -> BTreeMap<Method, BTreeMap<String, BTreeMap<String, Summary>>> {
    let mut values: BTreeMap<Method, BTreeMap<String, BTreeMap<String, Vec<f64>>>> = BTreeMap::new();
    for r in folds.iter().filter_map(FoldEntry::completed) {
        for (method, by_alpha) in &r.metrics {
            for (alpha, m) in by_alpha {
                let slot = values.entry(*method).or_default().entry(alpha.clone()).or_default();
                for (name, v) in m.flatten() {
                    let list = slot.entry(name).or_default();
                    if let Some(v) = v.filter(|v| v.is_finite()) {
                        list.push(v);
                    }
                }
            }
        }
    }
    values
        .into_iter()
        .map(|(m, a)| (m, a.into_iter().map(|(k, s)| (k, s.into_iter().map(|(n, v)| (n, Summary::of(&v))).collect())).collect()))
        .collect()
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text).map_err(|e| PipelineError::Report(e.to_string()))?;
        if report.format != REPORT_FORMAT {
            return Err(PipelineError::Report(format!("expected format {REPORT_FORMAT}, found {}", report.format)));
        }
        Ok(report)
    }

    /// Metric column names in CSV order.
    fn metric_names(&self) -> Vec<String> {
        self.folds
            .iter()
            .filter_map(FoldEntry::completed)
            .flat_map(|r| r.metrics.values().flat_map(|a| a.values()))
            .next()
            .map(|m| m.flatten().into_iter().map(|(n, _)| n).collect())
            .unwrap_or_default()
    }

    /// One row per fold, method and α, then `mean` and `sd` rows.
    pub fn to_csv(&self) -> String {
        let names = self.metric_names();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["fold".to_string(), "method".into(), "alpha".into()];
        header.extend(names.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in self.folds.iter().filter_map(FoldEntry::completed) {
            for (method, by_alpha) in &r.metrics {
                for (alpha, m) in by_alpha {
                    let mut row = vec![(r.fold + 1).to_string(), method.name().to_string(), alpha.clone()];
                    row.extend(m.flatten().into_iter().map(|(_, v)| cell(v)));
                    w.write_record(&row).expect("in-memory write");
                }
            }
        }
        for (label, pick) in [("mean", 0), ("sd", 1)] {
            for (method, by_alpha) in &self.aggregate {
                for (alpha, metrics) in by_alpha {
                    let mut row = vec![label.to_string(), method.name().to_string(), alpha.clone()];
                    row.extend(names.iter().map(|n| {
                        let s = metrics.get(n);
                        cell(s.and_then(|s| if pick == 0 { s.mean } else { s.sd }))
                    }));
                    w.write_record(&row).expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let completed: Vec<&FoldResult> = self.folds.iter().filter_map(FoldEntry::completed).collect();
        let _ = writeln!(
            out,
            "{} rows, {} hospitals, {} regions; {} of {} folds completed; config {}",
            self.n_rows,
            self.n_hospitals,
            self.n_regions,
            completed.len(),
            self.folds.len(),
            &self.config_hash[..12.min(self.config_hash.len())]
        );
        let fmt = |s: Option<&Summary>, digits: usize| match s {
            Some(Summary { mean: Some(m), sd: Some(sd), .. }) => format!("{m:.digits$} ± {sd:.digits$}"),
            Some(Summary { mean: Some(m), .. }) => format!("{m:.digits$}"),
            _ => "-".to_string(),
        };
        let mut alphas: Vec<&String> = self.aggregate.values().flat_map(|a| a.keys()).collect();
        alphas.sort_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
        alphas.dedup();
        for alpha in alphas {
            let _ = writeln!(out, "\nalpha = {alpha}");
            let _ = writeln!(
                out,
                "{:<10} {:>17} {:>17} {:>15} {:>15} {:>15} {:>17}",
                "method", "coverage", "width", "adaptation", "ece", "crps", "winkler"
            );
            for (method, by_alpha) in &self.aggregate {
                let Some(m) = by_alpha.get(alpha) else { continue };
                let _ = writeln!(
                    out,
                    "{:<10} {:>17} {:>17} {:>15} {:>15} {:>15} {:>17}",
                    method.name(),
                    fmt(m.get("coverage"), 4),
                    fmt(m.get("mean_width"), 3),
                    fmt(m.get("adaptation_ratio"), 3),
                    fmt(m.get("ece"), 3),
                    fmt(m.get("mean_crps"), 3),
                    fmt(m.get("mean_winkler"), 3)
                );
            }
        }
        let _ = writeln!(out, "\nconvergence");
        for f in &self.folds {
            match f {
                FoldEntry::Completed(r) => {
                    let c = &r.convergence;
                    let _ = writeln!(
                        out,
                        "  fold {}: {} (max R-hat {:.4}, min ESS {:.0}); sigma raw {:.3}, calibrated {:.3}, residual sd {:.3}",
                        r.fold + 1,
                        if c.pass { "pass" } else { "FAIL" },
                        c.max_r_hat,
                        c.min_ess,
                        r.sigma.mean_raw,
                        r.sigma.mean_calibrated,
                        r.sigma.residual_sd
                    );
                }
                FoldEntry::Failed { fold, error, .. } => {
                    let _ = writeln!(out, "  fold {}: failed: {error}", fold + 1);
                }
            }
        }
        if !self.gate.passed {
            let _ = writeln!(out, "  gate failed in folds {:?}; metrics reported by override", self.gate.failing_folds.iter().map(|f| f + 1).collect::<Vec<_>>());
        }
        for s in &self.subgroups {
            let _ = writeln!(out, "\ncoverage by {}", s.attribute);
            for (method, by_alpha) in &s.tables {
                for (alpha, groups) in by_alpha {
                    let _ = writeln!(out, "  {} alpha = {alpha}", method.name());
                    for g in groups {
                        let _ = writeln!(
                            out,
                            "    {:<16} n={:<6} coverage {:.4} width {:.3}{}",
                            g.group,
                            g.count,
                            g.coverage,
                            g.mean_width,
                            if g.small { " (small sample)" } else { "" }
                        );
                    }
                }
            }
        }
        out
    }
}

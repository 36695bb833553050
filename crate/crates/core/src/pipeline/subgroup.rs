use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{alpha_key, Method};
use super::fold::Prediction;
use super::{PipelineError, Result};
use crate::data::HierarchicalDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub count: usize,
    pub coverage: f64,
    pub mean_width: f64,
    /// Fewer rows than the report's minimum group size.
    pub small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub attribute: String,
    pub min_size: usize,
    /// Method → α → one entry per group, in group-label order.
    pub tables: BTreeMap<Method, BTreeMap<String, Vec<GroupStat>>>,
}

/// Coverage and width of test predictions broken down by `attribute`:
/// `hospital`, `region` or any hospital attribute of the dataset.
pub fn subgroup_report(
    predictions: &[Prediction],
    dataset: &HierarchicalDataset,
    attribute: &str,
    min_size: usize,
) -> Result<SubgroupReport> {
    let labels = dataset
        .group_labels(attribute)
        .ok_or_else(|| PipelineError::Config(format!("unknown grouping attribute {attribute:?}")))?;
    // (covered, width sum, count) per method, α, group.
    let mut acc: BTreeMap<Method, BTreeMap<String, BTreeMap<&str, (usize, f64, usize)>>> = BTreeMap::new();
    for p in predictions {
        let label = labels
            .get(p.row)
            .ok_or_else(|| PipelineError::Report(format!("prediction row {} outside dataset", p.row)))?;
        let e = acc.entry(p.method).or_default().entry(alpha_key(p.alpha)).or_default().entry(label.as_str()).or_default();
        e.0 += usize::from(p.covered());
        e.1 += p.upper - p.lower;
        e.2 += 1;
    }
    let tables = acc
        .into_iter()
        .map(|(m, by_alpha)| {
            let by_alpha = by_alpha
                .into_iter()
                .map(|(a, groups)| {
                    let stats = groups
                        .into_iter()
                        .map(|(g, (cov, width, n))| GroupStat {
                            group: g.to_string(),
                            count: n,
                            coverage: cov as f64 / n as f64,
                            mean_width: width / n as f64,
                            small: n < min_size,
                        })
                        .collect();
                    (a, stats)
                })
                .collect();
            (m, by_alpha)
        })
        .collect();
    Ok(SubgroupReport { attribute: attribute.to_string(), min_size, tables })
}

//! Interval and uncertainty evaluation metrics.
//!
//! All functions are pure. Row order only matters for quintile tie-breaking,
//! where equal σ values are ordered by row position.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no rows to evaluate")]
    Empty,
    #[error("need at least {needed} rows, got {found}")]
    TooFew { needed: usize, found: usize },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Evaluation inputs for one test row. Bounds are unclipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub y: f64,
    pub yhat: f64,
    pub lower: f64,
    pub upper: f64,
    pub sigma_raw: f64,
    pub sigma_cal: f64,
}

impl EvalRow {
    pub fn covered(&self) -> bool {
        self.lower <= self.y && self.y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuintileStat {
    pub count: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

pub fn coverage(rows: &[EvalRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(rows.iter().filter(|r| r.covered()).count() as f64 / rows.len() as f64)
}

pub fn mean_width(rows: &[EvalRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(rows.iter().map(EvalRow::width).sum::<f64>() / rows.len() as f64)
}

/// Five contiguous groups by ascending `σ_cal`, sizes differing by at most one.
pub fn quintile_stats(rows: &[EvalRow]) -> Result<[QuintileStat; 5]> {
    let n = rows.len();
    if n < 5 {
        return Err(MetricError::TooFew { needed: 5, found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rows[a].sigma_cal.total_cmp(&rows[b].sigma_cal).then(a.cmp(&b)));
    let mut out = [QuintileStat { count: 0, coverage: 0.0, mean_width: 0.0, mean_sigma: 0.0 }; 5];
    for (q, stat) in out.iter_mut().enumerate() {
        let group = &order[q * n / 5..(q + 1) * n / 5];
        let c = group.len() as f64;
        stat.count = group.len();
        stat.coverage = group.iter().filter(|&&i| rows[i].covered()).count() as f64 / c;
        stat.mean_width = group.iter().map(|&i| rows[i].width()).sum::<f64>() / c;
        stat.mean_sigma = group.iter().map(|&i| rows[i].sigma_cal).sum::<f64>() / c;
    }
    Ok(out)
}

/// Mean width of the top quintile over the bottom quintile.
pub fn adaptation_ratio(quintiles: &[QuintileStat; 5]) -> Result<f64> {
    let q1 = quintiles[0].mean_width;
    if !(q1 > 0.0) {
        return Err(MetricError::Undefined("bottom-quintile width is zero".into()));
    }
    Ok(quintiles[4].mean_width / q1)
}

pub fn correlation(a: &[f64], b: &[f64], kind: CorrelationKind) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricError::Input(format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(MetricError::TooFew { needed: 3, found: a.len() });
    }
    match kind {
        CorrelationKind::Pearson => pearson(a, b),
        CorrelationKind::Spearman => pearson(&average_ranks(a), &average_ranks(b)),
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::Undefined("constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `Σ_b (n_b/n)·|mean_b(σ) − sd_b(resid)|` over equal-count bins ordered by
/// σ. Bin residual spread is the population standard deviation.
pub fn ece(sigma: &[f64], resid: &[f64], n_bins: usize) -> Result<f64> {
    let n = sigma.len();
    if resid.len() != n {
        return Err(MetricError::Input(format!("lengths {} and {}", n, resid.len())));
    }
    if n_bins == 0 || n < n_bins {
        return Err(MetricError::TooFew { needed: n_bins.max(1), found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[a].total_cmp(&sigma[b]).then(a.cmp(&b)));
    let mut total = 0.0;
    for b in 0..n_bins {
        let bin = &order[b * n / n_bins..(b + 1) * n / n_bins];
        let c = bin.len() as f64;
        let ms = bin.iter().map(|&i| sigma[i]).sum::<f64>() / c;
        let mr = bin.iter().map(|&i| resid[i]).sum::<f64>() / c;
        let sd = (bin.iter().map(|&i| (resid[i] - mr).powi(2)).sum::<f64>() / c).sqrt();
        total += c / n as f64 * (ms - sd).abs();
    }
    Ok(total)
}

/// OLS slope of `|resid|` on σ with an intercept.
pub fn calibration_slope(sigma: &[f64], abs_resid: &[f64]) -> Result<f64> {
    if sigma.len() != abs_resid.len() {
        return Err(MetricError::Input(format!("lengths {} and {}", sigma.len(), abs_resid.len())));
    }
    if sigma.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, found: sigma.len() });
    }
    let n = sigma.len() as f64;
    let mx = sigma.iter().sum::<f64>() / n;
    let my = abs_resid.iter().sum::<f64>() / n;
    let sxx: f64 = sigma.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricError::Undefined("constant sigma".into()));
    }
    let sxy: f64 = sigma.iter().zip(abs_resid).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// CRPS of `N(μ, σ²)` at `y`: `σ·[z(2Φ(z) − 1) + 2φ(z) − 1/√π]`.
pub fn crps_gaussian(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(MetricError::Input(format!("sigma must be positive, got {sigma}")));
    }
    let normal = Normal::standard();
    let z = (y - mu) / sigma;
    Ok(sigma * (z * (2.0 * normal.cdf(z) - 1.0) + 2.0 * normal.pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Interval width plus `2/α` times the distance by which `y` misses.
pub fn winkler_score(y: f64, lower: f64, upper: f64, alpha: f64) -> f64 {
    let w = upper - lower;
    if y < lower {
        w + 2.0 / alpha * (lower - y)
    } else if y > upper {
        w + 2.0 / alpha * (y - upper)
    } else {
        w
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    if y.len() != yhat.len() {
        return Err(MetricError::Input(format!("lengths {} and {}", y.len(), yhat.len())));
    }
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Everything reported per method, fold and α. Statistics that are
/// undefined on the given rows (for instance a correlation with constant σ)
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub quintile_coverage: [f64; 5],
    pub quintile_width: [f64; 5],
    pub quintile_count: [usize; 5],
    pub adaptation_ratio: Option<f64>,
    /// Top-quintile intervals narrower than bottom-quintile ones.
    pub anti_adaptive: bool,
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub ece: Option<f64>,
    pub calib_slope: Option<f64>,
    pub mean_crps: Option<f64>,
    pub mean_winkler: f64,
    pub rmse: f64,
}

impl MetricReport {
    /// Correlations, ECE, slope and CRPS use `σ_cal` against the residual
    /// `y − ŷ`; CRPS scores `N(ŷ, σ_cal²)`.
    pub fn evaluate(rows: &[EvalRow], alpha: f64) -> Result<Self> {
        let quintiles = quintile_stats(rows)?;
        let n = rows.len() as f64;
        let sigma: Vec<f64> = rows.iter().map(|r| r.sigma_cal).collect();
        let resid: Vec<f64> = rows.iter().map(|r| r.y - r.yhat).collect();
        let abs_resid: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let yhat: Vec<f64> = rows.iter().map(|r| r.yhat).collect();
        let adaptation_ratio = adaptation_ratio(&quintiles).ok();
        let mean_crps = rows
            .iter()
            .map(|r| crps_gaussian(r.y, r.yhat, r.sigma_cal))
            .sum::<Result<f64>>()
            .ok()
            .map(|s| s / n);
        Ok(Self {
            n: rows.len(),
            coverage: coverage(rows)?,
            mean_width: mean_width(rows)?,
            quintile_coverage: quintiles.map(|q| q.coverage),
            quintile_width: quintiles.map(|q| q.mean_width),
            quintile_count: quintiles.map(|q| q.count),
            adaptation_ratio,
            anti_adaptive: adaptation_ratio.is_some_and(|a| a < 1.0),
            pearson_r: correlation(&sigma, &abs_resid, CorrelationKind::Pearson).ok(),
            spearman_rho: correlation(&sigma, &abs_resid, CorrelationKind::Spearman).ok(),
            ece: ece(&sigma, &resid, 10).ok(),
            calib_slope: calibration_slope(&sigma, &abs_resid).ok(),
            mean_crps,
            mean_winkler: rows.iter().map(|r| winkler_score(r.y, r.lower, r.upper, alpha)).sum::<f64>() / n,
            rmse: rmse(&y, &yhat)?,
        })
    }

    /// Flat `(name, value)` view used for CSV output and fold aggregation.
    pub fn flatten(&self) -> Vec<(String, Option<f64>)> {
        let mut out = vec![
            ("n".to_string(), Some(self.n as f64)),
            ("coverage".to_string(), Some(self.coverage)),
            ("mean_width".to_string(), Some(self.mean_width)),
        ];
        for q in 0..5 {
            out.push((format!("q{}_coverage", q + 1), Some(self.quintile_coverage[q])));
        }
        for q in 0..5 {
            out.push((format!("q{}_width", q + 1), Some(self.quintile_width[q])));
        }
        out.extend([
            ("adaptation_ratio".to_string(), self.adaptation_ratio),
            ("pearson_r".to_string(), self.pearson_r),
            ("spearman_rho".to_string(), self.spearman_rho),
            ("ece".to_string(), self.ece),
            ("calib_slope".to_string(), self.calib_slope),
            ("mean_crps".to_string(), self.mean_crps),
            ("mean_winkler".to_string(), Some(self.mean_winkler)),
            ("rmse".to_string(), Some(self.rmse)),
        ]);
        out
    }
}

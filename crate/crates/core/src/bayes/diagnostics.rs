use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::PosteriorSamples;
use crate::metrics::average_ranks;

/// Convergence thresholds: every R̂ below `R_HAT_MAX`, every ESS above `ESS_MIN`.
pub const R_HAT_MAX: f64 = 1.01;
pub const ESS_MIN: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RHat {
    pub value: f64,
    /// All draws identical; `value` is reported as 1.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub r_hat: f64,
    pub ess: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub params: Vec<ParamDiagnostics>,
    pub max_r_hat: f64,
    pub min_ess: f64,
    pub pass: bool,
    pub flags: Vec<String>,
}

impl ConvergenceReport {
    pub fn failing(&self) -> impl Iterator<Item = &ParamDiagnostics> {
        self.params.iter().filter(|p| !(p.r_hat < R_HAT_MAX && p.ess > ESS_MIN))
    }
}

pub(crate) fn convergence_report(samples: &PosteriorSamples) -> ConvergenceReport {
    let mut params = Vec::new();
    for (name, values) in samples.parameters() {
        let chains = samples.by_chain(&values);
        let rh = r_hat(&chains);
        let ess = if rh.degenerate { values.len() as f64 } else { ess(&rank_normalize(&split(&chains))) };
        params.push(ParamDiagnostics { name, r_hat: rh.value, ess, degenerate: rh.degenerate });
    }
    let max_r_hat = params.iter().map(|p| p.r_hat).fold(f64::NEG_INFINITY, f64::max);
    let min_ess = params.iter().map(|p| p.ess).fold(f64::INFINITY, f64::min);
    let pass = params.iter().all(|p| p.r_hat < R_HAT_MAX && p.ess > ESS_MIN);
    let mut flags: Vec<String> = params.iter().filter(|p| p.degenerate).map(|p| format!("{}: zero variance", p.name)).collect();
    if !pass {
        let worst: Vec<&str> = params.iter().filter(|p| !(p.r_hat < R_HAT_MAX && p.ess > ESS_MIN)).map(|p| p.name.as_str()).collect();
        flags.push(format!("not converged: {}", worst.join(", ")));
    }
    ConvergenceReport { params, max_r_hat, min_ess, pass, flags }
}

/// Rank-normalized split R̂: the larger of the bulk value and the value on
/// folded draws `|x − median|`.
///
/// Needs at least 2 chains of at least 4 draws; shorter input yields NaN.
pub fn r_hat(chains: &[Vec<f64>]) -> RHat {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return RHat { value: f64::NAN, degenerate: false };
    }
    if all.iter().all(|&v| v == all[0]) {
        return RHat { value: 1.0, degenerate: true };
    }
    let halves = split(chains);
    let bulk = split_r_hat(&rank_normalize(&halves));
    let med = median(&all);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = split_r_hat(&rank_normalize(&folded));
    RHat { value: bulk.max(tail), degenerate: false }
}

/// Effective sample size of (possibly several) chains using the multi-chain
/// autocorrelation estimate truncated by Geyer's initial positive sequence.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let acov: Vec<Vec<f64>> = chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu)).collect();
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 {
        let gm = means.iter().sum::<f64>() / m as f64;
        means.iter().map(|x| (x - gm).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = w * (nf - 1.0) / nf + b_over_n;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| 1.0 - (w - acov.iter().map(|a| a[t]).sum::<f64>() / m as f64) / var_plus;

    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

fn autocovariance(x: &[f64], mean: f64) -> Vec<f64> {
    let n = x.len();
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..n).map(|t| d[..n - t].iter().zip(&d[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64).collect()
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn split_r_hat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let gm = means.iter().sum::<f64>() / m;
    let b = n * means.iter().map(|x| (x - gm).powi(2)).sum::<f64>() / (m - 1.0);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Pooled average ranks mapped through the normal quantile function.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let ranks = average_ranks(&all);
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut it = ranks.into_iter().map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25)));
    chains.iter().map(|c| (0..c.len()).map(|_| it.next().unwrap()).collect()).collect()
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

//! Split-conformal calibration with cluster-aware strategies and
//! uncertainty-weighted scores.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::seed::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("no calibration scores")]
    Empty,
    #[error("{scores} scores but {clusters} cluster ids")]
    LengthMismatch { scores: usize, clusters: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("invalid calibration: {0}")]
    Invalid(String),
    #[error("weighted intervals need an uncertainty value")]
    MissingSigma,
}

pub type Result<T> = std::result::Result<T, ConformalError>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CalibrationStrategy {
    /// One quantile over all calibration scores.
    #[default]
    CdfPooling,
    /// One randomly drawn score per cluster.
    SingleSubsample,
    /// Median of `b` independent single-subsample quantiles.
    RepeatedSubsample { b: usize },
}

impl CalibrationStrategy {
    pub const DEFAULT_REPLICATES: usize = 100;

    pub fn validate(&self) -> Result<()> {
        match self {
            CalibrationStrategy::RepeatedSubsample { b } if *b < 2 => {
                Err(ConformalError::Invalid(format!("repeated sub-sampling needs b >= 2, got {b}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CalibrationMode {
    Unweighted,
    /// Scores divided by `max(σ^gamma, epsilon)`.
    Weighted { gamma: f64, epsilon: f64 },
}

impl CalibrationMode {
    pub fn validate(&self) -> Result<()> {
        if let CalibrationMode::Weighted { gamma, epsilon } = *self {
            if !(0.0..=2.0).contains(&gamma) {
                return Err(ConformalError::Invalid(format!("gamma must lie in [0, 2], got {gamma}")));
            }
            if !(epsilon > 0.0) {
                return Err(ConformalError::Invalid(format!("epsilon must be positive, got {epsilon}")));
            }
        }
        Ok(())
    }

    /// Interval scale factor at uncertainty `sigma`.
    pub fn weight(&self, sigma: Option<f64>) -> Result<f64> {
        match *self {
            CalibrationMode::Unweighted => Ok(1.0),
            CalibrationMode::Weighted { gamma, epsilon } => {
                let s = sigma.ok_or(ConformalError::MissingSigma)?;
                Ok(s.powf(gamma).max(epsilon))
            }
        }
    }
}

/// Audit trail for a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProvenance {
    pub seed: u64,
    pub split_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub q_hat: f64,
    pub strategy: CalibrationStrategy,
    pub alpha: f64,
    pub mode: CalibrationMode,
    pub n_scores: usize,
    pub n_clusters: usize,
    pub provenance: CalibrationProvenance,
}

impl ConformalCalibration {
    pub fn with_split_hash(mut self, hash: impl Into<String>) -> Self {
        self.provenance.split_hash = Some(hash.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub half_width: f64,
    /// Set by clipping when the whole interval fell below the floor.
    pub degenerate: bool,
}

impl PredictionInterval {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self { lower: center - half_width, upper: center + half_width, center, half_width, degenerate: false }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Closed-interval membership.
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

pub fn conformity_scores(y: &[f64], yhat: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), yhat.len(), "length mismatch");
    y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).collect()
}

/// `|y − ŷ| / max(σ^γ, ε)`.
pub fn weighted_scores(y: &[f64], yhat: &[f64], sigma: &[f64], gamma: f64, epsilon: f64) -> Vec<f64> {
    assert!(y.len() == yhat.len() && y.len() == sigma.len(), "length mismatch");
    y.iter()
        .zip(yhat)
        .zip(sigma)
        .map(|((a, b), s)| (a - b).abs() / s.powf(gamma).max(epsilon))
        .collect()
}

/// Rank `⌈(1−α)(n+1)⌉` among `n` scores, clamped to `n`.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let level = (1.0 - alpha) * (n as f64 + 1.0);
    // The tolerance absorbs representation error in α, e.g. 0.95 · 20.
    ((level - 1e-9).ceil() as usize).clamp(1, n)
}

/// The `⌈(1−α)(n+1)⌉`-th smallest score, or the largest when that rank
/// exceeds `n`.
pub fn finite_sample_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(ConformalError::Empty);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::Alpha(alpha));
    }
    let mut v = scores.to_vec();
    let k = quantile_rank(v.len(), alpha);
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Calibrates `q̂` from scores and their cluster ids.
pub fn calibrate<S: AsRef<str>>(
    scores: &[f64],
    clusters: &[S],
    strategy: CalibrationStrategy,
    alpha: f64,
    mode: CalibrationMode,
    seed: u64,
) -> Result<ConformalCalibration> {
    strategy.validate()?;
    mode.validate()?;
    if scores.is_empty() {
        return Err(ConformalError::Empty);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::Alpha(alpha));
    }
    if scores.len() != clusters.len() {
        return Err(ConformalError::LengthMismatch { scores: scores.len(), clusters: clusters.len() });
    }
    if scores.iter().any(|s| !(*s >= 0.0)) {
        return Err(ConformalError::Invalid("scores must be nonnegative".into()));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, c) in scores.iter().zip(clusters) {
        groups.entry(c.as_ref()).or_default().push(*s);
    }
    let groups: Vec<Vec<f64>> = groups.into_values().collect();
    let q_hat = match strategy {
        CalibrationStrategy::CdfPooling => finite_sample_quantile(scores, alpha)?,
        CalibrationStrategy::SingleSubsample => subsample_quantile(&groups, alpha, seed::derive(seed, Stream::Subsample, 0))?,
        CalibrationStrategy::RepeatedSubsample { b } => {
            let mut qs: Vec<f64> = par::map_range(b, |i| {
                subsample_quantile(&groups, alpha, seed::derive(seed, Stream::Subsample, i as u64)).expect("validated input")
            });
            qs.sort_by(f64::total_cmp);
            if b % 2 == 1 {
                qs[b / 2]
            } else {
                0.5 * (qs[b / 2 - 1] + qs[b / 2])
            }
        }
    };
    Ok(ConformalCalibration {
        q_hat,
        strategy,
        alpha,
        mode,
        n_scores: scores.len(),
        n_clusters: groups.len(),
        provenance: CalibrationProvenance { seed, split_hash: None },
    })
}

fn subsample_quantile(groups: &[Vec<f64>], alpha: f64, seed: u64) -> Result<f64> {
    let mut rng = seed::rng(seed);
    let picked: Vec<f64> = groups.iter().map(|g| g[rng.random_range(0..g.len())]).collect();
    finite_sample_quantile(&picked, alpha)
}

/// `ŷ ± q̂·w` with `w = 1` unweighted and `max(σ^γ, ε)` weighted.
pub fn predict_interval(calibration: &ConformalCalibration, yhat: f64, sigma: Option<f64>) -> Result<PredictionInterval> {
    let w = calibration.mode.weight(sigma)?;
    Ok(PredictionInterval::new(yhat, calibration.q_hat * w))
}

/// Raises the lower bound to `floor`. An interval entirely below the floor
/// collapses to `[floor, floor]` and is marked degenerate.
pub fn clip_interval(interval: PredictionInterval, floor: f64) -> PredictionInterval {
    if interval.lower >= floor {
        return interval;
    }
    let degenerate = interval.upper < floor;
    let lower = floor;
    let upper = interval.upper.max(floor);
    PredictionInterval {
        lower,
        upper,
        center: interval.center.clamp(lower, upper),
        half_width: (upper - lower) / 2.0,
        degenerate: interval.degenerate || degenerate,
    }
}

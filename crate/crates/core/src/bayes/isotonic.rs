use serde::{Deserialize, Serialize};

use super::{BayesError, Result};

/// Converts a mean absolute residual into a standard deviation under a
/// zero-mean normal: `E|e| = σ·√(2/π)`.
const HALF_NORMAL_TO_SD: f64 = 1.253_314_137_315_500_3;

/// Nondecreasing step function from raw σ to calibrated σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicMap {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at the largest breakpoint not above `x`; flat beyond both ends.
    pub fn apply(&self, x: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= x);
        self.values[i.saturating_sub(1)]
    }
}

/// Pool-adjacent-violators on values already ordered by the predictor.
/// `groups[i]` holds the targets sharing the i-th distinct predictor value;
/// tied targets always receive one fitted value.
///
/// A block's value is the plain mean of its targets summed in input order,
/// so the result does not depend on the merge order.
pub fn pava(groups: &[Vec<f64>]) -> Vec<f64> {
    let flat: Vec<f64> = groups.iter().flatten().copied().collect();
    let mut offsets = Vec::with_capacity(groups.len() + 1);
    offsets.push(0);
    for g in groups {
        offsets.push(offsets.last().unwrap() + g.len());
    }
    let mean = |a: usize, b: usize| flat[offsets[a]..offsets[b]].iter().sum::<f64>() / (offsets[b] - offsets[a]) as f64;

    // Stack of blocks as [start, end) ranges over groups.
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(groups.len());
    for g in 0..groups.len() {
        let mut block = (g, g + 1, mean(g, g + 1));
        while let Some(&(start, _, prev)) = blocks.last() {
            if prev > block.2 {
                blocks.pop();
                block = (start, block.1, mean(start, block.1));
            } else {
                break;
            }
        }
        blocks.push(block);
    }
    let mut out = vec![0.0; groups.len()];
    for (a, b, v) in blocks {
        out[a..b].iter_mut().for_each(|o| *o = v);
    }
    out
}

/// Fits calibrated σ against raw σ with target `|residual|·√(π/2)`.
pub fn fit_isotonic(raw_sigmas: &[f64], abs_residuals: &[f64]) -> Result<IsotonicMap> {
    if raw_sigmas.len() != abs_residuals.len() {
        return Err(BayesError::Input(format!("{} sigmas but {} residuals", raw_sigmas.len(), abs_residuals.len())));
    }
    if raw_sigmas.len() < 10 {
        return Err(BayesError::Input(format!("need at least 10 pairs, got {}", raw_sigmas.len())));
    }
    if raw_sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(BayesError::Input("raw sigmas must be positive and finite".into()));
    }
    if abs_residuals.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(BayesError::Input("absolute residuals must be nonnegative and finite".into()));
    }
    let mut order: Vec<usize> = (0..raw_sigmas.len()).collect();
    order.sort_by(|&a, &b| raw_sigmas[a].total_cmp(&raw_sigmas[b]).then(a.cmp(&b)));
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for i in order {
        let t = abs_residuals[i] * HALF_NORMAL_TO_SD;
        if breakpoints.last() == Some(&raw_sigmas[i]) {
            groups.last_mut().unwrap().push(t);
        } else {
            breakpoints.push(raw_sigmas[i]);
            groups.push(vec![t]);
        }
    }
    let values = pava(&groups);
    Ok(IsotonicMap { breakpoints, values })
}

pub fn apply_isotonic(map: &IsotonicMap, raw_sigma: f64) -> f64 {
    map.apply(raw_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singletons(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn one_violation() {
        assert_eq!(pava(&singletons(&[1.0, 3.0, 2.0])), vec![1.0, 2.5, 2.5]);
    }

    #[test]
    fn monotone_input_is_kept() {
        let x: Vec<f64> = (1..=12).map(f64::from).collect();
        let r: Vec<f64> = x.iter().map(|v| v / HALF_NORMAL_TO_SD).collect();
        let m = fit_isotonic(&x, &r).unwrap();
        for (b, v) in m.breakpoints().iter().zip(m.values()) {
            assert!((m.apply(*b) - v).abs() < 1e-12);
            assert!((v - b).abs() < 1e-12);
        }
    }

    #[test]
    fn edges_and_constant_input() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let r: Vec<f64> = (1..=10).map(f64::from).collect();
        let m = fit_isotonic(&x, &r).unwrap();
        assert_eq!(m.apply(0.0), m.values()[0]);
        assert_eq!(m.apply(100.0), *m.values().last().unwrap());

        let m = fit_isotonic(&[2.0; 10], &r).unwrap();
        assert_eq!(m.breakpoints().len(), 1);
        assert_eq!(m.apply(0.1), m.apply(7.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_isotonic(&[1.0; 5], &[1.0; 5]).is_err());
        let mut x = vec![1.0; 10];
        x[3] = 0.0;
        assert!(fit_isotonic(&x, &[1.0; 10]).is_err());
    }
}

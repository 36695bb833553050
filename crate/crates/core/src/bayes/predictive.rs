use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PosteriorSamples;
use crate::par;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictiveMethod {
    /// Standard deviation of simulated replicates, `replicates` per draw.
    /// The normal variates are shared by all rows, so differences between
    /// rows reflect the posterior rather than simulation noise.
    MonteCarlo { replicates: usize },
    /// Variance decomposition over draws: `Var(μ) + E[σ²]`, plus `E[σ_h²]`
    /// and `E[σ_r²]` for unseen clusters.
    Analytic,
}

impl Default for PredictiveMethod {
    fn default() -> Self {
        PredictiveMethod::MonteCarlo { replicates: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictRow<'a> {
    pub fhat: f64,
    pub hospital_id: &'a str,
    pub region_id: &'a str,
}

/// Precomputed normal variates for repeated σ_pred evaluation.
pub struct PredictiveSampler<'s> {
    samples: &'s PosteriorSamples,
    method: PredictiveMethod,
    /// Per replicate: draw index and (ε, α, γ) variates.
    z: Vec<(usize, [f64; 3])>,
}

impl<'s> PredictiveSampler<'s> {
    pub fn new(samples: &'s PosteriorSamples, method: PredictiveMethod, seed: u64) -> Self {
        let z = match method {
            PredictiveMethod::MonteCarlo { replicates } => {
                let mut rng = seed::child_rng(seed, Stream::Predictive, 0);
                let mut z = Vec::with_capacity(samples.len() * replicates.max(1));
                for d in 0..samples.len() {
                    for _ in 0..replicates.max(1) {
                        let mut v = [0.0; 3];
                        v.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut rng));
                        z.push((d, v));
                    }
                }
                z
            }
            PredictiveMethod::Analytic => Vec::new(),
        };
        Self { samples, method, z }
    }

    fn mu(&self, d: usize, row: &PredictRow, h: Option<usize>, r: Option<usize>) -> f64 {
        let s = self.samples;
        s.beta0[d] + s.beta1[d] * row.fhat + h.map_or(0.0, |h| s.alpha[d][h]) + r.map_or(0.0, |r| s.gamma[d][r])
    }

    pub fn sigma(&self, row: &PredictRow) -> f64 {
        let s = self.samples;
        let h = s.hospital_index(row.hospital_id);
        let r = s.region_index(row.region_id);
        match self.method {
            PredictiveMethod::MonteCarlo { .. } => {
                if self.z.len() < 2 {
                    return s.sigma2.first().map_or(f64::NAN, |v| v.sqrt());
                }
                let reps: Vec<f64> = self
                    .z
                    .iter()
                    .map(|&(d, [ze, za, zg])| {
                        let mut y = self.mu(d, row, h, r) + s.sigma2[d].sqrt() * ze;
                        if h.is_none() {
                            y += s.sigma_h2[d].sqrt() * za;
                        }
                        if r.is_none() {
                            y += s.sigma_r2[d].sqrt() * zg;
                        }
                        y
                    })
                    .collect();
                sample_sd(&reps)
            }
            PredictiveMethod::Analytic => {
                let n = s.len() as f64;
                let mus: Vec<f64> = (0..s.len()).map(|d| self.mu(d, row, h, r)).collect();
                let mean = mus.iter().sum::<f64>() / n;
                let var_mu = mus.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
                let noise = (0..s.len())
                    .map(|d| {
                        s.sigma2[d] + if h.is_none() { s.sigma_h2[d] } else { 0.0 } + if r.is_none() { s.sigma_r2[d] } else { 0.0 }
                    })
                    .sum::<f64>()
                    / n;
                (var_mu + noise).sqrt()
            }
        }
    }

    pub fn sigmas(&self, rows: &[PredictRow]) -> Vec<f64> {
        par::map_slice(rows, |r| self.sigma(r))
    }
}

/// Posterior predictive standard deviation at one row. Unseen hospitals
/// and regions contribute a fresh random effect per replicate.
pub fn posterior_predictive_sigma(samples: &PosteriorSamples, row: &PredictRow, method: PredictiveMethod, seed: u64) -> f64 {
    PredictiveSampler::new(samples, method, seed).sigma(row)
}

/// Posterior mean of `μ`; unseen clusters contribute their prior mean 0.
pub fn posterior_mean(samples: &PosteriorSamples, row: &PredictRow) -> f64 {
    let h = samples.hospital_index(row.hospital_id);
    let r = samples.region_index(row.region_id);
    let n = samples.len() as f64;
    (0..samples.len())
        .map(|d| {
            samples.beta0[d]
                + samples.beta1[d] * row.fhat
                + h.map_or(0.0, |h| samples.alpha[d][h])
                + r.map_or(0.0, |r| samples.gamma[d][r])
        })
        .sum::<f64>()
        / n
}

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Identical draws with the given variances and known H1 / R1.
    pub(crate) fn fixed_draws(n: usize, sigma2: f64, sigma_h2: f64, sigma_r2: f64) -> PosteriorSamples {
        PosteriorSamples {
            hospitals: vec!["H1".into()],
            regions: vec!["R1".into()],
            chain: (0..n).map(|i| i % 2).collect(),
            beta0: vec![1.0; n],
            beta1: vec![1.0; n],
            sigma2: vec![sigma2; n],
            sigma_h2: vec![sigma_h2; n],
            sigma_r2: vec![sigma_r2; n],
            alpha: vec![vec![0.5]; n],
            gamma: vec![vec![-0.5]; n],
            random_effects: true,
            sigma_fixed: false,
        }
    }

    const KNOWN: PredictRow = PredictRow { fhat: 3.0, hospital_id: "H1", region_id: "R1" };
    const UNSEEN: PredictRow = PredictRow { fhat: 3.0, hospital_id: "H9", region_id: "R1" };

    #[test]
    fn degenerate_posterior() {
        let s = fixed_draws(500, 4.0, 1.0, 1.0);
        assert_eq!(posterior_predictive_sigma(&s, &KNOWN, PredictiveMethod::Analytic, 0), 2.0);
        let mc = posterior_predictive_sigma(&s, &KNOWN, PredictiveMethod::default(), 0);
        assert!((mc - 2.0).abs() < 0.2, "{mc}");
        assert_eq!(posterior_mean(&s, &KNOWN), 4.0);
    }

    #[test]
    fn unseen_hospital_analytic_vs_monte_carlo() {
        let s = fixed_draws(1, 1.0, 3.0, 1.0);
        assert_eq!(posterior_predictive_sigma(&s, &UNSEEN, PredictiveMethod::Analytic, 0), 2.0);
        let mc = posterior_predictive_sigma(&s, &UNSEEN, PredictiveMethod::MonteCarlo { replicates: 10_000 }, 1);
        assert!((mc - 2.0).abs() < 0.1, "{mc}");
    }

    #[test]
    fn unseen_at_least_known() {
        let s = fixed_draws(400, 2.0, 1.5, 1.0);
        for m in [PredictiveMethod::Analytic, PredictiveMethod::default()] {
            assert!(posterior_predictive_sigma(&s, &UNSEEN, m, 3) >= posterior_predictive_sigma(&s, &KNOWN, m, 3));
        }
    }
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureKind, HierarchicalDataset, PatientRecord, Result};
use crate::seed::{self, Stream};

/// Lognormal shape used by the right-skewed noise mode.
const SKEW_SIGMA: f64 = 0.8;

/// Generator for three-level clustered outcomes with a prescribed variance
/// decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub n_hospitals: usize,
    pub n_regions: usize,
    pub n_features: usize,
    pub patient_share: f64,
    pub hospital_share: f64,
    pub region_share: f64,
    /// Outcome variance in days².
    pub total_variance: f64,
    /// Baseline outcome in days.
    pub base: f64,
    /// Fraction of the patient-level variance explained by features.
    pub signal_fraction: f64,
    /// Right-skewed (standardized lognormal) noise instead of Gaussian.
    pub skew: bool,
    /// Scale noise per row so the noisiest rows have `noise_ratio` times the
    /// standard deviation of the quietest. Low-volume hospitals are noisier.
    pub heteroscedastic: bool,
    pub noise_ratio: f64,
    /// Log-scale spread of hospital sizes.
    pub size_dispersion: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 5000,
            n_hospitals: 100,
            n_regions: 4,
            n_features: 6,
            patient_share: 0.467,
            hospital_share: 0.125,
            region_share: 0.408,
            total_variance: 50.6,
            base: 20.0,
            signal_fraction: 0.5,
            skew: false,
            heteroscedastic: false,
            noise_ratio: 3.0,
            size_dispersion: 0.75,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        let shares = [self.patient_share, self.hospital_share, self.region_share];
        if shares.iter().any(|s| !(*s >= 0.0)) {
            return bad("variance shares must be nonnegative".into());
        }
        if (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("variance shares sum to {}, not 1", shares.iter().sum::<f64>()));
        }
        if self.n_regions < 1 || self.n_hospitals < self.n_regions {
            return bad(format!("need n_hospitals ({}) >= n_regions ({}) >= 1", self.n_hospitals, self.n_regions));
        }
        if self.n_hospitals < 2 {
            return bad("need at least 2 hospitals".into());
        }
        if self.n_patients < self.n_hospitals {
            return bad(format!("{} patients cannot populate {} hospitals", self.n_patients, self.n_hospitals));
        }
        if self.n_features < 1 {
            return bad("need at least one feature".into());
        }
        if !(self.total_variance > 0.0) {
            return bad("total_variance must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.signal_fraction) {
            return bad("signal_fraction must lie in [0, 1]".into());
        }
        if !(self.noise_ratio >= 1.0) {
            return bad("noise_ratio must be at least 1".into());
        }
        if !(self.size_dispersion >= 0.0) {
            return bad("size_dispersion must be nonnegative".into());
        }
        Ok(())
    }
}

/// Draws a dataset from `base + region + hospital + signal + noise`.
///
/// Region and hospital effects are rescaled after drawing so that their
/// random-effects variance components (as estimated by a nested ANOVA on the
/// realized cluster sizes) equal the configured shares of `total_variance`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<HierarchicalDataset> {
    config.validate()?;
    let mut rng = seed::child_rng(config.seed, Stream::Synthetic, 0);
    let (n, h_count, r_count, p) = (config.n_patients, config.n_hospitals, config.n_regions, config.n_features);
    let v_total = config.total_variance;

    let region_of: Vec<usize> = (0..h_count).map(|h| h % r_count).collect();

    // Cluster sizes: one patient per hospital, the rest multinomial on
    // lognormal weights.
    let weights: Vec<f64> = (0..h_count).map(|_| (config.size_dispersion * normal(&mut rng)).exp()).collect();
    let total_w: f64 = weights.iter().sum();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total_w;
            Some(*acc)
        })
        .collect();
    let mut sizes = vec![1usize; h_count];
    for _ in h_count..n {
        let u: f64 = rng.random();
        let h = cumulative.partition_point(|&c| c < u).min(h_count - 1);
        sizes[h] += 1;
    }
    let mut region_sizes = vec![0usize; r_count];
    for h in 0..h_count {
        region_sizes[region_of[h]] += sizes[h];
    }
    let nf = n as f64;

    // Region effects.
    let mut region_effect: Vec<f64> = (0..r_count).map(|_| normal(&mut rng)).collect();
    let region_target = (nf - region_sizes.iter().map(|&s| (s * s) as f64).sum::<f64>() / nf) * config.region_share * v_total;
    rescale_weighted(&mut region_effect, &region_sizes, region_target);

    // Hospital effects, centered within region.
    let mut hosp_effect: Vec<f64> = (0..h_count).map(|_| normal(&mut rng)).collect();
    for r in 0..r_count {
        let members: Vec<usize> = (0..h_count).filter(|&h| region_of[h] == r).collect();
        let wsum: f64 = members.iter().map(|&h| sizes[h] as f64).sum();
        let mean = members.iter().map(|&h| sizes[h] as f64 * hosp_effect[h]).sum::<f64>() / wsum;
        for &h in &members {
            hosp_effect[h] -= mean;
        }
    }
    let within: f64 = (0..h_count).map(|h| (sizes[h] * sizes[h]) as f64 / region_sizes[region_of[h]] as f64).sum();
    let hosp_target = (nf - within) * config.hospital_share * v_total;
    rescale_weighted(&mut hosp_effect, &sizes, hosp_target);

    // Feature signal direction.
    let w: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
    let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let v_patient = config.patient_share * v_total;
    let signal_sd = (v_patient * config.signal_fraction).sqrt();
    let noise_sd = (v_patient * (1.0 - config.signal_fraction)).sqrt();

    // Noise scale per hospital: smallest hospital gets the largest factor.
    let mut by_size: Vec<usize> = (0..h_count).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut factor = vec![1.0; h_count];
    if config.heteroscedastic && h_count > 1 {
        for (rank, &h) in by_size.iter().enumerate() {
            let u = rank as f64 / (h_count - 1) as f64;
            factor[h] = 1.0 + (config.noise_ratio - 1.0) * u;
        }
        let ms = (0..h_count).map(|h| sizes[h] as f64 * factor[h] * factor[h]).sum::<f64>() / nf;
        let c = ms.sqrt();
        factor.iter_mut().for_each(|f| *f /= c);
    }

    let width = h_count.to_string().len();
    let hospital_name = |h: usize| format!("H{:0width$}", h + 1);
    let region_name = |r: usize| format!("R{}", r + 1);
    let skew_mean = (SKEW_SIGMA * SKEW_SIGMA / 2.0).exp();
    let skew_sd = (((SKEW_SIGMA * SKEW_SIGMA).exp() - 1.0) * (SKEW_SIGMA * SKEW_SIGMA).exp()).sqrt();

    let mut records = Vec::with_capacity(n);
    let mut clamped = 0usize;
    for h in 0..h_count {
        let r = region_of[h];
        for _ in 0..sizes[h] {
            let x: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
            let signal = signal_sd * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w_norm;
            let z = normal(&mut rng);
            let z = if config.skew { ((SKEW_SIGMA * z).exp() - skew_mean) / skew_sd } else { z };
            let scale = noise_sd * factor[h];
            let mut y = config.base + region_effect[r] + hosp_effect[h] + signal + scale * z;
            if y < 0.0 {
                y = 0.0;
                clamped += 1;
            }
            records.push(PatientRecord {
                features: x.into_iter().map(Some).collect(),
                hospital_id: hospital_name(h),
                region_id: region_name(r),
                outcome: y,
                noise_scale: Some(scale),
            });
        }
    }
    if clamped > 0 {
        log::debug!("{clamped} synthetic outcomes clamped at 0");
    }
    records.shuffle(&mut rng);

    let mut attributes = BTreeMap::new();
    for (rank, &h) in by_size.iter().enumerate() {
        let bed_size = match rank * 3 / h_count {
            0 => "large",
            1 => "medium",
            _ => "small",
        };
        attributes.insert(hospital_name(h), BTreeMap::from([("bed_size".to_string(), bed_size.to_string())]));
    }

    let names = (0..p).map(|j| format!("x{j}")).collect();
    Ok(HierarchicalDataset::new(records, names, vec![FeatureKind::Continuous; p])?.with_hospital_attributes(attributes))
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Size-weighted centering, then scaling so that `Σ size·effect² = target`.
fn rescale_weighted(effects: &mut [f64], sizes: &[usize], target: f64) {
    if effects.len() == 1 {
        effects[0] = 0.0;
        return;
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let mean = effects.iter().zip(sizes).map(|(e, &s)| e * s as f64).sum::<f64>() / total;
    effects.iter_mut().for_each(|e| *e -= mean);
    let ss: f64 = effects.iter().zip(sizes).map(|(e, &s)| s as f64 * e * e).sum();
    let k = if ss > 0.0 && target > 0.0 { (target / ss).sqrt() } else { 0.0 };
    effects.iter_mut().for_each(|e| *e *= k);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut c = SyntheticConfig { patient_share: 0.5, ..Default::default() };
        assert!(c.validate().is_err());
        c = SyntheticConfig { n_hospitals: 3, n_regions: 4, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(SyntheticConfig::default().validate().is_ok());
    }

    #[test]
    fn same_seed_same_data() {
        let c = SyntheticConfig { n_patients: 500, n_hospitals: 20, ..Default::default() };
        let a = generate_synthetic(&c).unwrap();
        let b = generate_synthetic(&c).unwrap();
        assert_eq!(a, b);
        let c2 = SyntheticConfig { seed: 7, ..c };
        assert_ne!(generate_synthetic(&c2).unwrap(), a);
    }

    #[test]
    fn heteroscedastic_ratio() {
        let c = SyntheticConfig { n_patients: 2000, n_hospitals: 40, heteroscedastic: true, ..Default::default() };
        let ds = generate_synthetic(&c).unwrap();
        let scales: Vec<f64> = ds.records().iter().map(|r| r.noise_scale.unwrap()).collect();
        let max = scales.iter().cloned().fold(f64::MIN, f64::max);
        let min = scales.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max / min - 3.0).abs() < 1e-9);
        let ms = scales.iter().map(|s| s * s).sum::<f64>() / scales.len() as f64;
        let target = 0.467 * 50.6 * 0.5;
        assert!((ms - target).abs() < 1e-9 * target);
    }
}

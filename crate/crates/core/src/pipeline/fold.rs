use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::{alpha_key, ExperimentConfig, Method, SigmaSource};
use super::{PipelineError, Result};
use crate::bayes::{self, BayesModelSpec, BayesRow, ConvergenceReport, IsotonicMap, PosteriorSamples, PredictRow, PredictiveSampler};
use crate::conformal::{self, CalibrationMode, ConformalCalibration, PredictionInterval};
use crate::data::{self, HierarchicalDataset, PreprocessPlan, SplitPlan};
use crate::hrf::{self, HierarchySpec, HrfModel};
use crate::metrics::{EvalRow, MetricReport};
use crate::seed::{self, Stream};

/// Sub-seed slots under a fold seed.
const SEED_HRF: u64 = 0;
const SEED_BAYES: u64 = 1;
const SEED_PREDICTIVE: u64 = 2;
const SEED_CONFORMAL: u64 = 3;
const SEED_HOLDOUT: u64 = 4;

/// Serializable summary of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub split_fingerprint: String,
    pub preprocess_fingerprint: String,
    pub n_train: usize,
    pub n_calib: usize,
    /// Calibration rows used for the isotonic map / for conformal scores.
    pub n_isotonic: usize,
    pub n_conformal: usize,
    pub n_test: usize,
    pub convergence: ConvergenceReport,
    pub sigma: SigmaSummary,
    /// `q̂` per score-based method and α.
    pub q_hat: BTreeMap<Method, BTreeMap<String, f64>>,
    pub metrics: BTreeMap<Method, BTreeMap<String, MetricReport>>,
}

/// Test-set scale of the raw and calibrated uncertainties against the
/// realized residual spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub mean_raw: f64,
    pub mean_calibrated: f64,
    pub residual_sd: f64,
}

/// One test row under one method and α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub fold: usize,
    /// Row index in the full dataset.
    pub row: usize,
    pub method: Method,
    pub alpha: f64,
    pub y: f64,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub sigma_raw: f64,
    pub sigma_cal: f64,
}

impl Prediction {
    pub fn covered(&self) -> bool {
        self.lower <= self.y && self.y <= self.upper
    }
}

/// Everything fitted inside a fold, kept for inspection and leakage checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldArtifacts {
    pub preprocess: PreprocessPlan,
    pub hrf: HrfModel,
    pub posterior: PosteriorSamples,
    pub isotonic: IsotonicMap,
    pub calibrations: Vec<(Method, ConformalCalibration)>,
}

#[derive(Debug, Clone)]
pub struct FoldOutput {
    pub result: FoldResult,
    pub predictions: Vec<Prediction>,
    pub artifacts: FoldArtifacts,
}

pub fn fold_seed(master: u64, fold: usize) -> u64 {
    seed::derive(master, Stream::Fold, fold as u64)
}

/// Fits every model of one fold and evaluates the configured methods on
/// its test rows.
///
/// Preprocessing, the forests, their cluster encodings and the Bayesian
/// calibrator see training rows only. Calibration rows feed the isotonic
/// map and the conformal quantiles. Test outcomes are read only when the
/// metrics are computed.
pub fn run_fold(config: &ExperimentConfig, dataset: &HierarchicalDataset, plan: &SplitPlan, fold: usize) -> Result<FoldOutput> {
    plan.validate(dataset.len())?;
    if plan.train.is_empty() || plan.calib.is_empty() || plan.test.is_empty() {
        return Err(data::DataError::InvalidSplit("train, calibration and test must all be nonempty".into()).into());
    }
    let fseed = fold_seed(config.seed, fold);
    let sub = |slot| seed::derive(fseed, Stream::Fold, slot);

    let train = dataset.subset(&plan.train)?;
    let preprocess = data::fit_preprocess(&train)?;
    let train = data::apply_preprocess(&preprocess, &train)?;
    let calib = data::apply_preprocess(&preprocess, &dataset.subset(&plan.calib)?)?;
    let test = data::apply_preprocess(&preprocess, &dataset.subset(&plan.test)?)?;

    let hierarchy = HierarchySpec { seed: sub(SEED_HRF), ..config.hierarchy.clone() };
    let hrf = hrf::fit_hrf(&train, &hierarchy)?;
    let f_train = hrf::predict_hrf(&hrf, &train)?;
    let f_calib = hrf::predict_hrf(&hrf, &calib)?;
    let f_test = hrf::predict_hrf(&hrf, &test)?;

    let rows: Vec<BayesRow> = train
        .records()
        .iter()
        .zip(&f_train)
        .map(|(r, &f)| BayesRow { fhat: f, hospital_id: r.hospital_id.clone(), region_id: r.region_id.clone(), y: r.outcome })
        .collect();
    let spec = BayesModelSpec { seed: sub(SEED_BAYES), ..config.bayes.clone() };
    let (posterior, convergence) = bayes::fit_bayes(&rows, &spec)?;
    if !convergence.pass {
        log::warn!("fold {fold}: {}", convergence.flags.join("; "));
    }

    let sampler = PredictiveSampler::new(&posterior, config.predictive, sub(SEED_PREDICTIVE));
    let predict_rows = |ds: &HierarchicalDataset, f: &[f64]| -> Vec<(f64, f64)> {
        let rows: Vec<PredictRow> = ds
            .records()
            .iter()
            .zip(f)
            .map(|(r, &fhat)| PredictRow { fhat, hospital_id: &r.hospital_id, region_id: &r.region_id })
            .collect();
        let sigmas = sampler.sigmas(&rows);
        rows.iter().zip(sigmas).map(|(r, s)| (bayes::posterior_mean(&posterior, r), s * config.raw_sigma_scale)).collect()
    };
    let calib_pred = predict_rows(&calib, &f_calib);
    let test_pred = predict_rows(&test, &f_test);

    // Calibration rows split between the isotonic map and the conformal scores.
    let y_calib = calib.outcomes();
    let mut positions: Vec<usize> = (0..calib.len()).collect();
    let (iso_rows, conf_rows) = if config.isotonic_holdout > 0.0 {
        positions.shuffle(&mut seed::rng(sub(SEED_HOLDOUT)));
        let n_iso = (config.isotonic_holdout * calib.len() as f64).round() as usize;
        let (a, b) = positions.split_at(n_iso.min(calib.len().saturating_sub(1)));
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    } else {
        (positions.clone(), positions)
    };
    let iso_sigma: Vec<f64> = iso_rows.iter().map(|&i| calib_pred[i].1).collect();
    let iso_resid: Vec<f64> = iso_rows.iter().map(|&i| (y_calib[i] - f_calib[i]).abs()).collect();
    let isotonic = bayes::fit_isotonic(&iso_sigma, &iso_resid)?;

    let weight_sigma = |raw: f64| match config.sigma_source {
        SigmaSource::Calibrated => isotonic.apply(raw),
        SigmaSource::Raw => raw,
    };
    let conf_y: Vec<f64> = conf_rows.iter().map(|&i| y_calib[i]).collect();
    let conf_f: Vec<f64> = conf_rows.iter().map(|&i| f_calib[i]).collect();
    let conf_w: Vec<f64> = conf_rows.iter().map(|&i| weight_sigma(calib_pred[i].1)).collect();
    let conf_clusters: Vec<&str> = conf_rows.iter().map(|&i| calib.records()[i].hospital_id.as_str()).collect();
    let plain_scores = conformal::conformity_scores(&conf_y, &conf_f);
    let weighted_scores = conformal::weighted_scores(&conf_y, &conf_f, &conf_w, config.gamma, config.epsilon);

    let weighted = CalibrationMode::Weighted { gamma: config.gamma, epsilon: config.epsilon };
    let split_hash = plan.fingerprint();
    let mut calibrations = Vec::new();
    let mut q_hat: BTreeMap<Method, BTreeMap<String, f64>> = BTreeMap::new();
    // Test-side quantities; outcomes are not touched until evaluation.
    let sigma_raw_test: Vec<f64> = test_pred.iter().map(|p| p.1).collect();
    let sigma_cal_test: Vec<f64> = sigma_raw_test.iter().map(|&s| isotonic.apply(s)).collect();
    let mut intervals: BTreeMap<(Method, usize), Vec<PredictionInterval>> = BTreeMap::new();
    let normal = Normal::standard();

    for (ai, &alpha) in config.alphas.iter().enumerate() {
        for &method in &config.methods {
            let iv: Vec<PredictionInterval> = match method {
                Method::Conformal | Method::Hybrid => {
                    let (scores, mode) = match method {
                        Method::Conformal => (&plain_scores, CalibrationMode::Unweighted),
                        _ => (&weighted_scores, weighted),
                    };
                    let cal = conformal::calibrate(scores, &conf_clusters, config.strategy, alpha, mode, sub(SEED_CONFORMAL))?
                        .with_split_hash(split_hash.clone());
                    q_hat.entry(method).or_default().insert(alpha_key(alpha), cal.q_hat);
                    let iv = f_test
                        .iter()
                        .zip(&sigma_raw_test)
                        .map(|(&f, &s)| conformal::predict_interval(&cal, f, Some(weight_sigma(s))))
                        .collect::<std::result::Result<Vec<_>, _>>()?;
                    calibrations.push((method, cal));
                    iv
                }
                Method::Bayesian => {
                    let z = normal.inverse_cdf(1.0 - alpha / 2.0);
                    test_pred.iter().map(|&(mu, s)| PredictionInterval::new(mu, z * s)).collect()
                }
            };
            intervals.insert((method, ai), iv);
        }
    }

    // Evaluation: the only place test outcomes are read.
    let y_test = test.outcomes();
    let mut metrics: BTreeMap<Method, BTreeMap<String, MetricReport>> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(intervals.len() * test.len());
    for ((method, ai), iv) in &intervals {
        let alpha = config.alphas[*ai];
        let rows: Vec<EvalRow> = iv
            .iter()
            .enumerate()
            .map(|(i, p)| EvalRow {
                y: y_test[i],
                yhat: p.center,
                lower: p.lower,
                upper: p.upper,
                sigma_raw: sigma_raw_test[i],
                sigma_cal: sigma_cal_test[i],
            })
            .collect();
        let report = MetricReport::evaluate(&rows, alpha)?;
        metrics.entry(*method).or_default().insert(alpha_key(alpha), report);
        for (i, r) in rows.iter().enumerate() {
            predictions.push(Prediction {
                fold,
                row: plan.test[i],
                method: *method,
                alpha,
                y: r.y,
                center: r.yhat,
                lower: r.lower,
                upper: r.upper,
                sigma_raw: r.sigma_raw,
                sigma_cal: r.sigma_cal,
            });
        }
    }

    let n = y_test.len() as f64;
    let resid: Vec<f64> = y_test.iter().zip(&f_test).map(|(y, f)| y - f).collect();
    let rmean = resid.iter().sum::<f64>() / n;
    let sigma = SigmaSummary {
        mean_raw: sigma_raw_test.iter().sum::<f64>() / n,
        mean_calibrated: sigma_cal_test.iter().sum::<f64>() / n,
        residual_sd: (resid.iter().map(|r| (r - rmean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt(),
    };

    let result = FoldResult {
        fold,
        seed: fseed,
        split_fingerprint: split_hash,
        preprocess_fingerprint: preprocess.fingerprint(),
        n_train: plan.train.len(),
        n_calib: plan.calib.len(),
        n_isotonic: iso_rows.len(),
        n_conformal: conf_rows.len(),
        n_test: plan.test.len(),
        convergence,
        sigma,
        q_hat,
        metrics,
    };
    Ok(FoldOutput { result, predictions, artifacts: FoldArtifacts { preprocess, hrf, posterior, isotonic, calibrations } })
}

impl From<conformal::ConformalError> for PipelineError {
    fn from(e: conformal::ConformalError) -> Self {
        PipelineError::Model(e.to_string())
    }
}

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::diagnostics::convergence_report;
use super::{BayesError, BayesModelSpec, BayesRow, ConvergenceReport, PosteriorSamples, Result};
use crate::par;
use crate::seed::{self, Stream};

/// Sufficient statistics of the calibration rows.
struct Data {
    f: Vec<f64>,
    y: Vec<f64>,
    h: Vec<usize>,
    n_h: Vec<f64>,
    sf_h: Vec<f64>,
    sy_h: Vec<f64>,
    /// Per-hospital `Σy²`, `Σf²` and `Σfy`.
    syy_h: Vec<f64>,
    sff_h: Vec<f64>,
    sfy_h: Vec<f64>,
    region_of: Vec<usize>,
    n_regions: usize,
    /// `ZᵀZ` and `Zᵀy` for the design `Z = [1, f, region indicators]`.
    ztz: DMatrix<f64>,
    zty: DVector<f64>,
}

impl Data {
    fn new(rows: &[BayesRow]) -> Result<(Self, Vec<String>, Vec<String>)> {
        let mut hierarchy: BTreeMap<&str, &str> = BTreeMap::new();
        for r in rows {
            if !(r.fhat.is_finite() && r.y.is_finite()) {
                return Err(BayesError::Input("non-finite prediction or outcome".into()));
            }
            if let Some(prev) = hierarchy.insert(&r.hospital_id, &r.region_id) {
                if prev != r.region_id {
                    return Err(BayesError::Nesting {
                        hospital: r.hospital_id.clone(),
                        first: prev.to_string(),
                        second: r.region_id.clone(),
                    });
                }
            }
        }
        let hospitals: Vec<String> = hierarchy.keys().map(|h| h.to_string()).collect();
        let mut regions: Vec<String> = hierarchy.values().map(|r| r.to_string()).collect();
        regions.sort();
        regions.dedup();
        let region_index = |r: &str| regions.binary_search_by(|x| x.as_str().cmp(r)).unwrap();
        let region_of: Vec<usize> = hierarchy.values().map(|r| region_index(r)).collect();

        let (n_hosp, n_regions) = (hospitals.len(), regions.len());
        let p = 2 + n_regions;
        let mut d = Data {
            f: rows.iter().map(|r| r.fhat).collect(),
            y: rows.iter().map(|r| r.y).collect(),
            h: rows.iter().map(|r| hospitals.binary_search(&r.hospital_id).unwrap()).collect(),
            n_h: vec![0.0; n_hosp],
            sf_h: vec![0.0; n_hosp],
            sy_h: vec![0.0; n_hosp],
            syy_h: vec![0.0; n_hosp],
            sff_h: vec![0.0; n_hosp],
            sfy_h: vec![0.0; n_hosp],
            region_of,
            n_regions,
            ztz: DMatrix::zeros(p, p),
            zty: DVector::zeros(p),
        };
        for i in 0..rows.len() {
            let (f, y, h) = (d.f[i], d.y[i], d.h[i]);
            let k = 2 + d.region_of[h];
            d.n_h[h] += 1.0;
            d.sf_h[h] += f;
            d.sy_h[h] += y;
            d.syy_h[h] += y * y;
            d.sff_h[h] += f * f;
            d.sfy_h[h] += f * y;
            d.ztz[(0, 0)] += 1.0;
            d.ztz[(0, 1)] += f;
            d.ztz[(1, 1)] += f * f;
            d.ztz[(0, k)] += 1.0;
            d.ztz[(1, k)] += f;
            d.ztz[(k, k)] += 1.0;
            d.zty[0] += y;
            d.zty[1] += f * y;
            d.zty[k] += y;
        }
        for a in 0..p {
            for b in 0..a {
                d.ztz[(a, b)] = d.ztz[(b, a)];
            }
        }
        Ok((d, hospitals, regions))
    }

    fn n(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone)]
struct State {
    /// `(β₀, β₁, γ_1..γ_R)`.
    theta: DVector<f64>,
    alpha: DVector<f64>,
    sigma2: f64,
    sigma_h2: f64,
    sigma_r2: f64,
}

struct Draws {
    beta0: Vec<f64>,
    beta1: Vec<f64>,
    sigma2: Vec<f64>,
    sigma_h2: Vec<f64>,
    sigma_r2: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

/// Fits the model and computes convergence diagnostics on the retained
/// draws. A failed report is returned, not raised.
pub fn fit_bayes(rows: &[BayesRow], spec: &BayesModelSpec) -> Result<(PosteriorSamples, ConvergenceReport)> {
    spec.validate()?;
    if rows.len() < 50 {
        return Err(BayesError::Input(format!("need at least 50 rows, got {}", rows.len())));
    }
    let (data, hospitals, regions) = Data::new(rows)?;
    if spec.random_effects && hospitals.len() < 2 {
        return Err(BayesError::Input(format!("need at least 2 hospitals, got {}", hospitals.len())));
    }
    let y0 = data.y[0];
    if data.y.iter().all(|&y| y == y0) {
        return Err(BayesError::Input("outcome is constant".into()));
    }

    let chains: Vec<Draws> = par::map_range(spec.chains, |c| run_chain(&data, spec, seed::derive(spec.seed, Stream::Chain, c as u64)));

    let mut samples = PosteriorSamples {
        hospitals,
        regions,
        chain: Vec::new(),
        beta0: Vec::new(),
        beta1: Vec::new(),
        sigma2: Vec::new(),
        sigma_h2: Vec::new(),
        sigma_r2: Vec::new(),
        alpha: Vec::new(),
        gamma: Vec::new(),
        random_effects: spec.random_effects,
        sigma_fixed: spec.fixed_sigma.is_some(),
    };
    for (c, d) in chains.into_iter().enumerate() {
        samples.chain.extend(std::iter::repeat_n(c, d.beta0.len()));
        samples.beta0.extend(d.beta0);
        samples.beta1.extend(d.beta1);
        samples.sigma2.extend(d.sigma2);
        samples.sigma_h2.extend(d.sigma_h2);
        samples.sigma_r2.extend(d.sigma_r2);
        samples.alpha.extend(d.alpha);
        samples.gamma.extend(d.gamma);
    }
    let mut report = convergence_report(&samples);
    if samples.regions.len() == 1 && spec.random_effects {
        report.flags.push("single region: gamma is confounded with beta0 and sigma_r2 is weakly identified".into());
    }
    Ok((samples, report))
}

fn run_chain(data: &Data, spec: &BayesModelSpec, chain_seed: u64) -> Draws {
    let mut rng = seed::rng(chain_seed);
    let n = data.n() as f64;
    let (n_hosp, n_reg) = (data.n_h.len(), data.n_regions);
    let mean_y = data.y.iter().sum::<f64>() / n;
    let mean_f = data.f.iter().sum::<f64>() / n;
    let var_y = data.y.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / (n - 1.0);

    // Overdispersed starting point.
    let beta1 = 1.0 + 0.2 * normal(&mut rng);
    let mut theta = DVector::zeros(2 + n_reg);
    theta[0] = mean_y - beta1 * mean_f + 0.1 * var_y.sqrt() * normal(&mut rng);
    theta[1] = beta1;
    let spread = |rng: &mut ChaCha8Rng| rng.random_range(0.25..2.0);
    let mut state = State {
        theta,
        alpha: DVector::zeros(n_hosp),
        sigma2: spec.fixed_sigma.map_or_else(|| var_y * spread(&mut rng), |s| s * s),
        sigma_h2: if spec.random_effects { 0.1 * var_y * spread(&mut rng) } else { 0.0 },
        sigma_r2: if spec.random_effects { 0.1 * var_y * spread(&mut rng) } else { 0.0 },
    };

    let mut out = Draws {
        beta0: Vec::with_capacity(spec.draws),
        beta1: Vec::with_capacity(spec.draws),
        sigma2: Vec::with_capacity(spec.draws),
        sigma_h2: Vec::with_capacity(spec.draws),
        sigma_r2: Vec::with_capacity(spec.draws),
        alpha: Vec::with_capacity(spec.draws),
        gamma: Vec::with_capacity(spec.draws),
    };
    let shifts = coordinate_shifts(VARIANCE_SHIFTS + 2 + n_reg + n_hosp);
    let total = spec.warmup + spec.draws * spec.thin;
    for it in 0..total {
        sweep(data, spec, &shifts, &mut state, &mut rng);
        if it >= spec.warmup && (it - spec.warmup + 1).is_multiple_of(spec.thin) {
            out.beta0.push(state.theta[0]);
            out.beta1.push(state.theta[1]);
            out.sigma2.push(state.sigma2);
            out.sigma_h2.push(state.sigma_h2);
            out.sigma_r2.push(state.sigma_r2);
            out.alpha.push(state.alpha.iter().copied().collect());
            out.gamma.push(if spec.random_effects { state.theta.rows(2, n_reg).iter().copied().collect() } else { vec![0.0; n_reg] });
        }
    }
    out
}

/// Spread of the random jitter added to the quantile shift. The jitter
/// makes each update a mixture of measure-preserving maps with a density,
/// so the chain is irreducible while keeping the anticorrelation.
const JITTER: f64 = 0.02;

/// Moves one coordinate on the quantile scale: an independent uniform, or
/// a shift by `rotation ± JITTER` modulo 1.
fn next_quantile(u: f64, rotation: Option<f64>, rng: &mut ChaCha8Rng) -> f64 {
    match rotation {
        None => rng.random::<f64>(),
        Some(c) => (u + c + JITTER * (2.0 * rng.random::<f64>() - 1.0)).rem_euclid(1.0),
    }
}

fn next_z(z: f64, rotation: Option<f64>, rng: &mut ChaCha8Rng) -> f64 {
    if rotation.is_none() {
        return normal(rng);
    }
    let n = Normal::standard();
    let u = next_quantile(n.cdf(z), rotation, rng);
    n.inverse_cdf(u.clamp(U_MIN, 1.0 - U_MIN))
}

const U_MIN: f64 = 1e-15;

/// Per-coordinate quantile shifts `frac(√p)` for the first `n` primes `p`.
/// Square roots of distinct primes are linearly independent over the
/// rationals, so the joint shift sequence fills the unit cube instead of
/// tracing a line. The three variance moves take the first shifts, the
/// location coordinates the rest.
fn coordinate_shifts(n: usize) -> Vec<f64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes.iter().map(|&p| (p as f64).sqrt().fract()).collect()
}

/// Number of shifts reserved for the variance moves.
const VARIANCE_SHIFTS: usize = 3;

fn sweep(data: &Data, spec: &BayesModelSpec, shifts: &[f64], s: &mut State, rng: &mut ChaCha8Rng) {
    let rot = |i: usize| spec.rotation.then(|| shifts[i]);
    if !spec.random_effects {
        update_fixed_effects(data, spec, shifts, s, rng);
        if spec.fixed_sigma.is_none() {
            let ss: f64 = (0..data.n()).map(|i| (data.y[i] - mean_at(data, s, i)).powi(2)).sum();
            let (k, scale) = (data.n() as f64, spec.sigma_scale);
            let log_p = |t: f64| {
                let w = (2.0 * t).exp();
                -(k - 1.0) * t - ss / (2.0 * w) - w / (2.0 * scale * scale)
            };
            s.sigma2 = (2.0 * grid_update(0.5 * s.sigma2.ln(), log_p, rot(0), rng)).exp();
        }
        return;
    }
    update_location(data, spec, shifts, s, rng);

    // Residual sums per hospital with α left out: `Σe` and `Σe²`.
    let beta1 = s.theta[1];
    let (mut se, mut see) = (vec![0.0; data.n_h.len()], vec![0.0; data.n_h.len()]);
    for h in 0..data.n_h.len() {
        let eta = s.theta[0] + s.theta[2 + data.region_of[h]];
        let n = data.n_h[h];
        se[h] = data.sy_h[h] - beta1 * data.sf_h[h] - n * eta;
        see[h] = data.syy_h[h] - 2.0 * beta1 * data.sfy_h[h] - 2.0 * eta * data.sy_h[h]
            + beta1 * beta1 * data.sff_h[h]
            + 2.0 * beta1 * eta * data.sf_h[h]
            + n * eta * eta;
    }
    let old = (s.sigma2, s.sigma_h2);
    if spec.fixed_sigma.is_none() {
        let (sh2, scale) = (s.sigma_h2, spec.sigma_scale);
        let log_p = |t: f64| {
            let w = (2.0 * t).exp();
            let mut lp = t - w / (2.0 * scale * scale);
            for h in 0..se.len() {
                let n = data.n_h[h];
                let tot = w + n * sh2;
                lp += -(n - 1.0) * t - 0.5 * tot.ln() - (see[h] - sh2 * se[h] * se[h] / tot) / (2.0 * w);
            }
            lp
        };
        s.sigma2 = (2.0 * grid_update(0.5 * s.sigma2.ln(), log_p, rot(0), rng)).exp();
    }
    // Redraw α from its new conditional with the same standardized variates.
    for h in 0..se.len() {
        let n = data.n_h[h];
        let d_old = n / old.0 + 1.0 / old.1;
        let d_new = n / s.sigma2 + 1.0 / old.1;
        let z = (s.alpha[h] - se[h] / old.0 / d_old) * d_old.sqrt();
        s.alpha[h] = se[h] / s.sigma2 / d_new + z / d_new.sqrt();
    }
    update_sigma_h(data, spec, rot(1), s, rng);

    // σ_r² with β₀ integrated out, given the region intercepts.
    let n_reg = data.n_regions;
    let s0 = spec.beta0_scale.powi(2);
    let eta: Vec<f64> = (0..n_reg).map(|r| s.theta[0] + s.theta[2 + r]).collect();
    let (sum, sumsq) = (eta.iter().sum::<f64>(), eta.iter().map(|e| e * e).sum::<f64>());
    let rf = n_reg as f64;
    let scale = spec.sigma_r_scale;
    // Quadratic form split as within-region spread over v plus the mean
    // term over v + R·s₀, which avoids cancellation as v shrinks.
    let within = (sumsq - sum * sum / rf).max(0.0);
    let log_p = |t: f64| {
        let v = (2.0 * t).exp();
        let tot = v + rf * s0;
        -(rf - 2.0) * t - 0.5 * tot.ln() - within / (2.0 * v) - sum * sum / (2.0 * rf * tot) - v / (2.0 * scale * scale)
    };
    let old_r2 = s.sigma_r2;
    s.sigma_r2 = (2.0 * grid_update(0.5 * s.sigma_r2.ln(), log_p, rot(2), rng)).exp();
    let b0 = |v: f64| {
        let prec = 1.0 / s0 + rf / v;
        (sum / v / prec, prec)
    };
    let ((m_old, p_old), (m_new, p_new)) = (b0(old_r2), b0(s.sigma_r2));
    let beta0 = m_new + (s.theta[0] - m_old) * (p_old / p_new).sqrt();
    s.theta[0] = beta0;
    for r in 0..n_reg {
        s.theta[2 + r] = eta[r] - beta0;
    }
}

fn mean_at(data: &Data, s: &State, i: usize) -> f64 {
    // Random effects stay at zero when they are not sampled.
    let h = data.h[i];
    s.theta[0] + s.theta[1] * data.f[i] + s.alpha[h] + s.theta[2 + data.region_of[h]]
}

/// Gaussian conditional of the location parameters given the variances,
/// factored as `ξ = (β₁, η_1..η_R)` with `β₀` and `α` integrated out, then
/// `β₀ | η` (prior only) and `α_h | ξ` per hospital. `η_r = β₀ + γ_r`.
struct Location {
    /// Precision and linear term of `ξ`.
    prec: DMatrix<f64>,
    b: DVector<f64>,
    /// Conditional precision of each `α_h`.
    d: Vec<f64>,
    inv_s2: f64,
    inv_r2: f64,
    prec_b0: f64,
}

impl Location {
    fn new(data: &Data, spec: &BayesModelSpec, sigma2: f64, sigma_h2: f64, sigma_r2: f64) -> Self {
        let n_reg = data.n_regions;
        let p = 1 + n_reg;
        let inv_s2 = 1.0 / sigma2;
        let inv_h2 = 1.0 / sigma_h2;
        let inv_r2 = 1.0 / sigma_r2;
        let mut prec = data.ztz.view((1, 1), (p, p)) * inv_s2;
        let mut b = data.zty.rows(1, p) * inv_s2;
        prec[(0, 0)] += 1.0 / spec.beta1_scale.powi(2);
        // Prior of η with β₀ integrated out: covariance σ_r² I + s₀² 11ᵀ,
        // split into the centring projector and the mean direction so that
        // a tiny σ_r² does not cancel against s₀².
        let s0 = spec.beta0_scale.powi(2);
        let rf = n_reg as f64;
        let along = 1.0 / (rf * (sigma_r2 + s0 * rf));
        for i in 0..n_reg {
            for j in 0..n_reg {
                let centred = if i == j { 1.0 - 1.0 / rf } else { -1.0 / rf };
                prec[(1 + i, 1 + j)] += inv_r2 * centred + along;
            }
        }
        let n_hosp = data.n_h.len();
        let mut d = vec![0.0; n_hosp];
        for h in 0..n_hosp {
            d[h] = data.n_h[h] * inv_s2 + inv_h2;
            let k = 1 + data.region_of[h];
            let q = [(0, data.sf_h[h] * inv_s2), (k, data.n_h[h] * inv_s2)];
            for &(a, qa) in &q {
                for &(c, qc) in &q {
                    prec[(a, c)] -= qa * qc / d[h];
                }
                b[a] -= qa * data.sy_h[h] * inv_s2 / d[h];
            }
        }
        let prec_b0 = 1.0 / s0 + rf * inv_r2;
        Location { prec, b, d, inv_s2, inv_r2, prec_b0 }
    }

    fn m_b0(&self, eta: impl Iterator<Item = f64>) -> f64 {
        eta.sum::<f64>() * self.inv_r2 / self.prec_b0
    }

    fn m_alpha(&self, data: &Data, h: usize, beta1: f64, eta: f64) -> f64 {
        (data.sy_h[h] - data.n_h[h] * eta - data.sf_h[h] * beta1) * self.inv_s2 / self.d[h]
    }

    /// Precision Cholesky factor and mean of `ξ`.
    fn xi(&self) -> (DMatrix<f64>, DVector<f64>) {
        let chol = cholesky_jittered(self.prec.clone());
        let m = chol.solve(&self.b);
        (chol.unpack(), m)
    }
}

fn cholesky_jittered(m: DMatrix<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let n = m.nrows();
    m.clone().cholesky().unwrap_or_else(|| {
        // Regularize slightly if rounding broke positive definiteness.
        let jitter = DMatrix::identity(n, n) * 1e-10 * m.diagonal().max();
        (m + jitter).cholesky().expect("precision is positive definite")
    })
}

/// Joint update of `(β₀, β₁, γ, α)` given the variances. The block is a
/// linear image of independent standard normals; those are recovered from
/// the current state, moved, and mapped back. Whitening `ξ` through the
/// covariance Cholesky factor keeps each region intercept close to a
/// single coordinate, since the data pin the intercepts down separately.
fn update_location(data: &Data, spec: &BayesModelSpec, shifts: &[f64], s: &mut State, rng: &mut ChaCha8Rng) {
    let n_reg = data.n_regions;
    let p = 1 + n_reg;
    let loc = Location::new(data, spec, s.sigma2, s.sigma_h2, s.sigma_r2);
    let chol = cholesky_jittered(loc.prec.clone());
    let m_xi = chol.solve(&loc.b);
    let cov = chol.inverse();
    let cov_l = cov.cholesky().expect("location covariance is positive definite").unpack();

    let n_hosp = data.n_h.len();
    let m_b0 = |xi: &DVector<f64>| loc.m_b0(xi.rows(1, n_reg).iter().copied());
    let m_alpha = |h: usize, xi: &DVector<f64>| loc.m_alpha(data, h, xi[0], xi[1 + data.region_of[h]]);

    let beta0 = s.theta[0];
    let xi = DVector::from_fn(p, |j, _| if j == 0 { s.theta[1] } else { beta0 + s.theta[1 + j] });
    let z_xi = cov_l.solve_lower_triangular(&(&xi - &m_xi)).expect("triangular solve");
    let z_b0 = (beta0 - m_b0(&xi)) * loc.prec_b0.sqrt();
    let z_alpha: Vec<f64> = (0..n_hosp).map(|h| (s.alpha[h] - m_alpha(h, &xi)) * loc.d[h].sqrt()).collect();

    let rot = |i: usize| spec.rotation.then(|| shifts[VARIANCE_SHIFTS + i]);
    let z_xi = DVector::from_fn(p, |j, _| next_z(z_xi[j], rot(j), rng));
    let z_b0 = next_z(z_b0, rot(p), rng);
    let z_alpha: Vec<f64> = z_alpha.iter().enumerate().map(|(h, &z)| next_z(z, rot(p + 1 + h), rng)).collect();

    let xi = &m_xi + &cov_l * z_xi;
    let beta0 = m_b0(&xi) + z_b0 / loc.prec_b0.sqrt();
    s.theta[0] = beta0;
    s.theta[1] = xi[0];
    for r in 0..n_reg {
        s.theta[2 + r] = xi[1 + r] - beta0;
    }
    for h in 0..n_hosp {
        s.alpha[h] = m_alpha(h, &xi) + z_alpha[h] / loc.d[h].sqrt();
    }
}

/// `σ_h²` given `(σ², σ_r²)` with every location parameter integrated
/// out. The slope, region intercepts and hospital effects are all coupled
/// to `σ_h²`, so updating it given them mixes slowly. Afterwards the
/// location block moves to its conditional under the new value through
/// its standardized variates, which leaves the joint target invariant.
fn update_sigma_h(data: &Data, spec: &BayesModelSpec, rotation: Option<f64>, s: &mut State, rng: &mut ChaCha8Rng) {
    let n_reg = data.n_regions;
    let (s2, r2) = (s.sigma2, s.sigma_r2);
    let s0 = spec.beta0_scale.powi(2);
    let rf = n_reg as f64;
    let (scale, b1_scale) = (spec.sigma_h_scale, spec.beta1_scale);
    // log p(y | ξ*, σ) + log p(ξ* | σ_r²) − log p(ξ* | y, σ) at the
    // conditional mean ξ*, dropping terms free of σ_h².
    let log_p = |t: f64| {
        let v = (2.0 * t).exp();
        let (l, xi) = Location::new(data, spec, s2, v, r2).xi();
        let beta1 = xi[0];
        let mut lp = t - v / (2.0 * scale * scale);
        for h in 0..data.n_h.len() {
            let n = data.n_h[h];
            let e = xi[1 + data.region_of[h]];
            let se = data.sy_h[h] - beta1 * data.sf_h[h] - n * e;
            let see = data.syy_h[h] - 2.0 * beta1 * data.sfy_h[h] - 2.0 * e * data.sy_h[h]
                + beta1 * beta1 * data.sff_h[h]
                + 2.0 * beta1 * e * data.sf_h[h]
                + n * e * e;
            let tot = s2 + n * v;
            lp += -0.5 * tot.ln() - (see - v * se * se / tot) / (2.0 * s2);
        }
        let eta = xi.rows(1, n_reg);
        let sum = eta.sum();
        let within = (eta.norm_squared() - sum * sum / rf).max(0.0);
        lp -= 0.5 * (within / r2 + sum * sum / (rf * (r2 + rf * s0)) + beta1 * beta1 / (b1_scale * b1_scale));
        lp - l.diagonal().iter().map(|x| x.ln()).sum::<f64>()
    };
    let new_h2 = (2.0 * grid_update(0.5 * s.sigma_h2.ln(), log_p, rotation, rng)).exp();

    let (old, new) = (Location::new(data, spec, s2, s.sigma_h2, r2), Location::new(data, spec, s2, new_h2, r2));
    let beta0 = s.theta[0];
    let xi = DVector::from_fn(1 + n_reg, |j, _| if j == 0 { s.theta[1] } else { beta0 + s.theta[1 + j] });
    let (l_old, m_old) = old.xi();
    let (l_new, m_new) = new.xi();
    let z = l_old.transpose() * (&xi - m_old);
    let xi_new = m_new + l_new.transpose().solve_upper_triangular(&z).expect("triangular solve");
    // The β₀ precision does not involve σ_h².
    let z_b0 = beta0 - old.m_b0(xi.rows(1, n_reg).iter().copied());
    let beta0_new = new.m_b0(xi_new.rows(1, n_reg).iter().copied()) + z_b0;
    for h in 0..data.n_h.len() {
        let k = 1 + data.region_of[h];
        let z = (s.alpha[h] - old.m_alpha(data, h, xi[0], xi[k])) * old.d[h].sqrt();
        s.alpha[h] = new.m_alpha(data, h, xi_new[0], xi_new[k]) + z / new.d[h].sqrt();
    }
    s.theta[0] = beta0_new;
    s.theta[1] = xi_new[0];
    for r in 0..n_reg {
        s.theta[2 + r] = xi_new[1 + r] - beta0_new;
    }
    s.sigma_h2 = new_h2;
}

/// `(β₀, β₁)` given a known or sampled `σ²`, without random effects.
fn update_fixed_effects(data: &Data, spec: &BayesModelSpec, shifts: &[f64], s: &mut State, rng: &mut ChaCha8Rng) {
    let inv_s2 = 1.0 / s.sigma2;
    let mut prec = data.ztz.view((0, 0), (2, 2)) * inv_s2;
    prec[(0, 0)] += 1.0 / spec.beta0_scale.powi(2);
    prec[(1, 1)] += 1.0 / spec.beta1_scale.powi(2);
    let b = data.zty.rows(0, 2) * inv_s2;
    let chol = prec.cholesky().expect("fixed-effect precision is positive definite");
    let m = chol.solve(&b);
    let l = chol.l();
    let current = s.theta.rows(0, 2).into_owned();
    let z = l.transpose() * (current - &m);
    let z = DVector::from_fn(2, |j, _| next_z(z[j], spec.rotation.then(|| shifts[VARIANCE_SHIFTS + j]), rng));
    let next = m + l.transpose().solve_upper_triangular(&z).expect("triangular solve");
    s.theta[0] = next[0];
    s.theta[1] = next[1];
}

/// Moves a scalar `t` under the one-dimensional density `exp(log_p)`,
/// either to a fresh draw or by a quantile shift, through a fine numerical
/// CDF. The grid brackets the mode and extends until the density has
/// fallen by `GRID_DROP` nats on both sides.
fn grid_update(current: f64, log_p: impl Fn(f64) -> f64, rotation: Option<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let cdf = GridCdf::new(&log_p, current);
    let u = next_quantile(cdf.cdf(current), rotation, rng);
    cdf.quantile(u)
}

const GRID_POINTS: usize = 256;
const GRID_DROP: f64 = 30.0;

/// Piecewise-linear CDF of a unimodal density on a uniform grid.
struct GridCdf {
    t: Vec<f64>,
    cum: Vec<f64>,
}

impl GridCdf {
    fn new(log_p: &impl Fn(f64) -> f64, start: f64) -> Self {
        let start = if start.is_finite() { start } else { 0.0 };
        let (mode, top) = maximize(log_p, start);
        // Curvature scale at the mode, used as the search step.
        let h = 1e-3;
        let curv = (2.0 * top - log_p(mode - h) - log_p(mode + h)) / (h * h);
        let step = if curv > 0.0 && curv.is_finite() { curv.sqrt().recip() } else { 0.5 };
        let edge = |dir: f64| {
            let mut x = mode + dir * step;
            for _ in 0..400 {
                if !(log_p(x) > top - GRID_DROP) {
                    break;
                }
                x += dir * step;
            }
            x
        };
        let (lo, hi) = (edge(-1.0), edge(1.0));
        let dx = (hi - lo) / (GRID_POINTS - 1) as f64;
        let t: Vec<f64> = (0..GRID_POINTS).map(|i| lo + dx * i as f64).collect();
        let dens: Vec<f64> = t.iter().map(|&x| (log_p(x) - top).exp()).map(|d| if d.is_finite() { d } else { 0.0 }).collect();
        let mut cum = Vec::with_capacity(GRID_POINTS);
        cum.push(0.0);
        for i in 1..GRID_POINTS {
            cum.push(cum[i - 1] + 0.5 * (dens[i - 1] + dens[i]));
        }
        let total = cum[GRID_POINTS - 1];
        cum.iter_mut().for_each(|c| *c /= total);
        Self { t, cum }
    }

    fn cdf(&self, x: f64) -> f64 {
        let i = self.t.partition_point(|&v| v <= x);
        if i == 0 {
            return 0.0;
        }
        if i == self.t.len() {
            return 1.0;
        }
        let f = (x - self.t[i - 1]) / (self.t[i] - self.t[i - 1]);
        self.cum[i - 1] + f * (self.cum[i] - self.cum[i - 1])
    }

    fn quantile(&self, u: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c <= u).clamp(1, self.t.len() - 1);
        let span = self.cum[i] - self.cum[i - 1];
        let f = if span > 0.0 { ((u - self.cum[i - 1]) / span).clamp(0.0, 1.0) } else { 0.5 };
        self.t[i - 1] + f * (self.t[i] - self.t[i - 1])
    }
}

/// Bracketing followed by golden-section search.
fn maximize(f: &impl Fn(f64) -> f64, start: f64) -> (f64, f64) {
    let mut step = 0.5;
    let (mut a, mut b) = (start, start + step);
    let (mut fa, mut fb) = (f(a), f(b));
    if fb < fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
        step = -step;
    }
    let mut c = b + step;
    let mut fc = f(c);
    for _ in 0..200 {
        if fc <= fb {
            break;
        }
        step *= 1.6;
        (a, b, fb) = (b, c, fc);
        c = b + step;
        fc = f(c);
    }
    let _ = fa;
    let (mut lo, mut hi) = if a < c { (a, c) } else { (c, a) };
    let g = 0.618_033_988_749_894_9;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let m = 0.5 * (lo + hi);
    (m, f(m))
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Gamma;

    /// Exact draw of `s²` under `p(s) ∝ s^(−k) exp(−ss / 2s²) exp(−s² / 2·scale²)`
    /// by rejection from the inverse-gamma part.
    fn draw_variance(k: usize, ss: f64, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
        let gamma = Gamma::new((k as f64 - 1.0) / 2.0, 1.0).unwrap();
        loop {
            let v = ss / 2.0 / gamma.sample(rng);
            if rng.random::<f64>() < (-v / (2.0 * scale * scale)).exp() {
                return v;
            }
        }
    }

    fn log_p(k: usize, ss: f64, scale: f64) -> impl Fn(f64) -> f64 {
        move |t: f64| {
            let w = (2.0 * t).exp();
            -(k as f64 - 1.0) * t - ss / (2.0 * w) - w / (2.0 * scale * scale)
        }
    }

    #[test]
    fn rotated_variance_stays_on_target() {
        // k = 50, ss = 50 and a wide prior: s² ~ InvGamma(24.5, 25) up to a
        // nearly flat factor, with mean 25 / 23.5.
        let mut rng = seed::rng(9);
        let mut t = 0.0;
        let mut sum = 0.0;
        let n = 20_000;
        for _ in 0..n {
            t = grid_update(t, log_p(50, 50.0, 100.0), Some(0.618_033_988_749_894_9), &mut rng);
            sum += (2.0 * t).exp();
        }
        let mean = sum / n as f64;
        assert!((mean - 25.0 / 23.5).abs() < 0.005, "{mean}");
    }

    #[test]
    fn grid_cdf_matches_rejection_sampler() {
        let lp = log_p(10, 20.0, 5.0);
        let cdf = GridCdf::new(&lp, 3.0);
        let mut rng = seed::rng(4);
        let n = 40_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_variance(10, 20.0, 5.0, &mut rng)).collect();
        for u in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
            let q = (2.0 * cdf.quantile(u)).exp();
            let below = draws.iter().filter(|&&v| v <= q).count() as f64 / n as f64;
            assert!((below - u).abs() < 0.01, "{u} {below}");
            assert!((cdf.cdf(cdf.quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn maximize_finds_interior_mode() {
        let (m, v) = maximize(&|x: f64| -(x - 7.5).powi(2), -3.0);
        assert!((m - 7.5).abs() < 1e-6 && v.abs() < 1e-10);
    }

    #[test]
    fn quantile_shift_wraps() {
        let mut rng = seed::rng(1);
        for _ in 0..100 {
            let u = next_quantile(0.9, Some(0.6), &mut rng);
            assert!((0.45..0.55).contains(&u), "{u}");
        }
    }
}

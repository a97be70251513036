//! NB2 regression with log link.
//!
//! Mean m = exp(Xβ), variance m + m²/φ. φ is the *inverse* of the common
//! `alpha` overdispersion parameter: large φ means little overdispersion and
//! φ = ∞ is Poisson.
//!
//! Integer counts make the gamma-function terms finite sums, so
//! `lnΓ(y + φ) − lnΓ(φ) − y ln φ = Σ_{k<y} ln(1 + k/φ)` is evaluated through a
//! tail-count table `tail[k] = #{i : y_i > k}` in O(max y) per call. All
//! φ-dependent terms are written with `ln_1p` so they stay accurate as φ → ∞.

use serde::{Deserialize, Serialize};

use super::linalg::{column_rms, cross, linear_predictor, ll_slack, newton_direction, scaled_norm};
use super::{FitOptions, MAX_DISPERSION};
use crate::error::{Error, Result};
use crate::panel::{DesignMatrix, FeatureSpec, INTERCEPT};

/// Count family of a fitted outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountFamily {
    Negbin,
    Poisson,
}

/// Fitted log-linear count model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegBinFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// φ; `f64::INFINITY` for Poisson.
    pub dispersion: f64,
    pub family: CountFamily,
    /// Set when an NB2 fit found no overdispersion and fell back to Poisson.
    pub poisson_fallback: bool,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub score_norm: f64,
    /// |∂ℓ/∂ln φ| / N at the returned estimate (0 for Poisson).
    pub dispersion_score: f64,
    pub loglik_trace: Vec<f64>,
    pub feature_spec: Option<FeatureSpec>,
}

impl NegBinFit {
    /// Fitted means exp(Xβ̂).
    pub fn predict_mean(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, model has {}",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        Ok(linear_predictor(design.values(), &self.coefficients)
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    pub fn with_spec(mut self, spec: FeatureSpec) -> Self {
        self.feature_spec = Some(spec);
        self
    }

    pub fn require_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
            })
        }
    }
}

/// Per-sample count summaries reused across likelihood evaluations.
struct Counts<'a> {
    y: &'a [f64],
    /// tail[k] = #{i : y_i > k}
    tail: Vec<f64>,
    log_factorial_sum: f64,
}

impl<'a> Counts<'a> {
    fn new(y: &'a [f64]) -> Result<Self> {
        let mut max = 0usize;
        for &v in y {
            if !(v >= 0.0) || v.fract() != 0.0 || v > 1e7 {
                return Err(Error::InvalidArgument(format!(
                    "count outcome {v} is not a non-negative integer"
                )));
            }
            max = max.max(v as usize);
        }
        let mut hist = vec![0usize; max + 1];
        for &v in y {
            hist[v as usize] += 1;
        }
        let mut tail = vec![0.0; max];
        let mut above = 0usize;
        for k in (0..max).rev() {
            above += hist[k + 1];
            tail[k] = above as f64;
        }
        // Σ_i ln(y_i!) = Σ_k tail[k] ln(k + 1)
        let log_factorial_sum = tail
            .iter()
            .enumerate()
            .map(|(k, t)| t * ((k + 1) as f64).ln())
            .sum();
        Ok(Self {
            y,
            tail,
            log_factorial_sum,
        })
    }

    /// Σ_i Σ_{k<y_i} ln(1 + k/φ)
    fn gamma_ratio(&self, phi: f64) -> f64 {
        if phi.is_infinite() {
            return 0.0;
        }
        self.tail
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, t)| t * (k as f64 / phi).ln_1p())
            .sum()
    }

    fn loglik(&self, eta: &[f64], phi: f64) -> f64 {
        let mut ll = self.gamma_ratio(phi) - self.log_factorial_sum;
        for (&y, &e) in self.y.iter().zip(eta) {
            let m = e.exp();
            ll += if phi.is_infinite() {
                y * e - m
            } else {
                y * e - (y + phi) * (m / phi).ln_1p()
            };
        }
        ll
    }

    /// ∂ℓ/∂φ at fixed means.
    fn dispersion_score(&self, means: &[f64], phi: f64) -> f64 {
        self.dispersion_derivatives(means, phi, false).0
    }

    /// (∂ℓ/∂φ, ∂²ℓ/∂φ²) at fixed means; the second is skipped unless asked.
    fn dispersion_derivatives(&self, means: &[f64], phi: f64, hessian: bool) -> (f64, f64) {
        let mut s = 0.0;
        let mut h = 0.0;
        for (&y, &m) in self.y.iter().zip(means) {
            let x = m / phi;
            s += x_over_1px_minus_log1p(x) + (y / phi) * x / (1.0 + x);
            if hessian {
                h += m / (phi * (phi + m)) - (m - y) / ((phi + m) * (phi + m));
            }
        }
        let mut tail_s = 0.0;
        let mut tail_h = 0.0;
        for (k, t) in self.tail.iter().enumerate() {
            let d = phi + k as f64;
            tail_s += t * k as f64 / d;
            if hessian {
                tail_h += t / (d * d);
            }
        }
        (s - tail_s / phi, h - tail_h)
    }

    /// ½ Σ [(y − m)² − y]: the score in 1/φ at the Poisson boundary.
    fn boundary_score(&self, means: &[f64]) -> f64 {
        0.5 * self
            .y
            .iter()
            .zip(means)
            .map(|(&y, &m)| (y - m) * (y - m) - y)
            .sum::<f64>()
    }
}

/// x/(1+x) − ln(1+x), accurate for small x.
fn x_over_1px_minus_log1p(x: f64) -> f64 {
    if x < 1e-3 {
        // Σ_{j≥2} (−1)^{j+1} (j−1)/j x^j
        let x2 = x * x;
        -0.5 * x2 + (2.0 / 3.0) * x2 * x - 0.75 * x2 * x2 + 0.8 * x2 * x2 * x
    } else {
        x / (1.0 + x) - x.ln_1p()
    }
}

fn mean_weights(means: &[f64], phi: f64) -> Vec<f64> {
    if phi.is_infinite() {
        means.to_vec()
    } else {
        means.iter().map(|&m| m * phi / (phi + m)).collect()
    }
}

fn mean_score_terms(y: &[f64], means: &[f64], phi: f64) -> Vec<f64> {
    y.iter()
        .zip(means)
        .map(|(&y, &m)| {
            if phi.is_infinite() {
                y - m
            } else {
                (y - m) * phi / (phi + m)
            }
        })
        .collect()
}

/// NB2 log-likelihood; `dispersion = f64::INFINITY` gives the Poisson one.
pub fn negbin_loglik(
    design: &DesignMatrix,
    counts: &[f64],
    coef: &[f64],
    dispersion: f64,
) -> Result<f64> {
    let c = Counts::new(counts)?;
    Ok(c.loglik(&linear_predictor(design.values(), coef), dispersion))
}

/// Score (∂ℓ/∂β, ∂ℓ/∂φ). The φ component is 0 for Poisson.
pub fn negbin_score(
    design: &DesignMatrix,
    counts: &[f64],
    coef: &[f64],
    dispersion: f64,
) -> Result<(Vec<f64>, f64)> {
    let c = Counts::new(counts)?;
    let means: Vec<f64> = linear_predictor(design.values(), coef)
        .into_iter()
        .map(f64::exp)
        .collect();
    let beta = cross(
        design.values(),
        &mean_score_terms(counts, &means, dispersion),
    );
    let phi = if dispersion.is_infinite() {
        0.0
    } else {
        c.dispersion_score(&means, dispersion)
    };
    Ok((beta, phi))
}

enum Dispersion {
    Estimate,
    Fixed(f64),
}

/// NB2 maximum likelihood for (β, φ) jointly.
///
/// Alternates a Fisher-scoring step on β with a safeguarded Newton solve of
/// the profile score in φ. A sample with no overdispersion relative to
/// Poisson drives φ̂ to +∞; the fit is then reported as Poisson with
/// `poisson_fallback` set.
pub fn fit_negbin(
    design: &DesignMatrix,
    counts: &[f64],
    options: &FitOptions,
) -> Result<NegBinFit> {
    fit_counts(design, counts, options, Dispersion::Estimate, None)
}

/// As [`fit_negbin`], starting from (β, φ) when given.
pub(crate) fn fit_negbin_from(
    design: &DesignMatrix,
    counts: &[f64],
    options: &FitOptions,
    start: Option<(&[f64], f64)>,
) -> Result<NegBinFit> {
    fit_counts(design, counts, options, Dispersion::Estimate, start)
}

/// Poisson log-linear regression.
pub fn fit_poisson(
    design: &DesignMatrix,
    counts: &[f64],
    options: &FitOptions,
) -> Result<NegBinFit> {
    fit_counts(
        design,
        counts,
        options,
        Dispersion::Fixed(f64::INFINITY),
        None,
    )
}

/// NB2 regression with φ held fixed.
pub fn fit_negbin_fixed(
    design: &DesignMatrix,
    counts: &[f64],
    dispersion: f64,
    options: &FitOptions,
) -> Result<NegBinFit> {
    if !(dispersion > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dispersion must be positive, got {dispersion}"
        )));
    }
    fit_counts(design, counts, options, Dispersion::Fixed(dispersion), None)
}

fn fit_counts(
    design: &DesignMatrix,
    counts: &[f64],
    options: &FitOptions,
    dispersion: Dispersion,
    start: Option<(&[f64], f64)>,
) -> Result<NegBinFit> {
    let x = design.values();
    let n = x.nrows();
    let q = x.ncols();
    if counts.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} counts for {n} design rows",
            counts.len()
        )));
    }
    if q > n {
        return Err(Error::InvalidArgument(format!(
            "{q} features for {n} observations"
        )));
    }
    let data = Counts::new(counts)?;
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument(
            "all counts are zero; log-link mean is not identified".into(),
        ));
    }
    let rms = column_rms(x);

    let start =
        start.filter(|(b, phi)| b.len() == q && b.iter().all(|v| v.is_finite()) && *phi > 0.0);
    let mut coef = vec![0.0; q];
    match start {
        Some((b, _)) => coef.copy_from_slice(b),
        None => {
            if let Some(j) = design.names().iter().position(|n| n == INTERCEPT) {
                coef[j] = (total / n as f64).ln();
            }
        }
    }
    let estimate = matches!(dispersion, Dispersion::Estimate);
    let mut phi = match (dispersion, start) {
        (Dispersion::Fixed(v), _) => v,
        (Dispersion::Estimate, Some((_, phi))) => phi,
        (Dispersion::Estimate, None) => f64::INFINITY,
    };
    let mut eta = linear_predictor(x, &coef);
    let mut ll = data.loglik(&eta, phi);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut score_norm;
    let mut phi_score;

    loop {
        let means: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let score = cross(x, &mean_score_terms(counts, &means, phi));
        score_norm = scaled_norm(&score, &rms, n);
        phi_score = if estimate && phi.is_finite() {
            (data.dispersion_score(&means, phi) * phi).abs() / n as f64
        } else {
            0.0
        };
        let phi_ok = !estimate
            || if phi.is_finite() {
                phi_score < options.tol
            } else {
                data.boundary_score(&means) <= 0.0
            };
        if score_norm < options.tol && phi_ok {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;

        // β step at fixed φ.
        if score_norm >= options.tol * 1e-3 {
            let step = newton_direction(x, &mean_weights(&means, phi), &score)?;
            let mut t = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + t * s).collect();
                let trial_eta = linear_predictor(x, &trial);
                let trial_ll = data.loglik(&trial_eta, phi);
                if trial_ll >= ll - ll_slack(ll) {
                    coef = trial;
                    eta = trial_eta;
                    ll = trial_ll;
                    break;
                }
                t *= 0.5;
            }
        }

        // φ step at fixed β.
        if estimate {
            let means: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
            let candidate = solve_dispersion(&data, &means, phi);
            let cand_ll = data.loglik(&eta, candidate);
            if cand_ll >= ll - ll_slack(ll) {
                phi = candidate;
                ll = cand_ll;
            }
        }
        trace.push(ll);
    }

    let (family, poisson_fallback) = if phi.is_infinite() {
        (CountFamily::Poisson, estimate)
    } else {
        (CountFamily::Negbin, false)
    };
    Ok(NegBinFit {
        names: design.names().to_vec(),
        coefficients: coef,
        dispersion: phi,
        family,
        poisson_fallback,
        converged,
        iterations,
        log_likelihood: ll,
        score_norm,
        dispersion_score: phi_score,
        loglik_trace: trace,
        feature_spec: None,
    })
}

/// Maximizes ℓ over φ at fixed means. Returns +∞ at the Poisson boundary.
fn solve_dispersion(data: &Counts<'_>, means: &[f64], current: f64) -> f64 {
    if data.boundary_score(means) <= 0.0 {
        return f64::INFINITY;
    }
    let score = |phi: f64| data.dispersion_score(means, phi);
    // Bracket the root in ln φ: score > 0 at lo, < 0 at hi.
    let start = if current.is_finite() { current } else { 1.0 };
    let (mut lo, mut hi) = (start, start);
    let mut s_lo = score(lo);
    let mut s_hi = s_lo;
    while s_lo <= 0.0 {
        hi = lo;
        s_hi = s_lo;
        lo *= 0.25;
        if lo < 1e-10 {
            return lo;
        }
        s_lo = score(lo);
    }
    while s_hi >= 0.0 {
        lo = hi;
        hi *= 4.0;
        if hi > MAX_DISPERSION {
            return f64::INFINITY;
        }
        s_hi = score(hi);
    }
    // Newton in t = ln φ from the previous value, falling back to bisection
    // when a step leaves the bracket.
    let mut t = start.ln();
    for _ in 0..200 {
        let phi = t.exp();
        let (s, h) = data.dispersion_derivatives(means, phi, true);
        if s > 0.0 {
            lo = phi;
        } else {
            hi = phi;
        }
        if s == 0.0 || (hi / lo - 1.0) < 1e-14 {
            return phi;
        }
        let slope = h * phi;
        let newton = t - s / slope;
        t = if slope < 0.0 && newton > lo.ln() && newton < hi.ln() {
            newton
        } else {
            0.5 * (lo.ln() + hi.ln())
        };
        if (t - phi.ln()).abs() < 1e-15 {
            return t.exp();
        }
    }
    t.exp()
}

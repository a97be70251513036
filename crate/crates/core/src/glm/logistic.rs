use serde::{Deserialize, Serialize};

use super::linalg::{column_rms, cross, linear_predictor, ll_slack, newton_direction, scaled_norm};
use super::{FitOptions, PROB_CLAMP};
use crate::error::{Error, Result};
use crate::panel::{DesignMatrix, FeatureSpec};

/// Fitted logistic regression e(X; α̂).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Scaled score norm at the returned coefficients.
    pub score_norm: f64,
    pub separation_detected: bool,
    /// Log-likelihood after each accepted Newton step, starting value first.
    pub loglik_trace: Vec<f64>,
    pub feature_spec: Option<FeatureSpec>,
}

impl LogisticFit {
    /// Fitted probabilities on `design`, clamped to [ε, 1 − ε].
    pub fn predict(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, model has {}",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        Ok(linear_predictor(design.values(), &self.coefficients)
            .into_iter()
            .map(clamped_prob)
            .collect())
    }

    pub fn with_spec(mut self, spec: FeatureSpec) -> Self {
        self.feature_spec = Some(spec);
        self
    }

    /// Turns a detected separation into an error.
    pub fn ensure_identified(&self) -> Result<&Self> {
        if self.separation_detected {
            Err(Error::SeparationDetected)
        } else {
            Ok(self)
        }
    }
}

/// |η| beyond which a fitted probability counts as pinned at 0 or 1.
const SEPARATION_ETA: f64 = 25.0;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn clamped_prob(eta: f64) -> f64 {
    sigmoid(eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// log(1 + e^η) without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn loglik_from_eta(eta: &[f64], labels: &[f64]) -> f64 {
    eta.iter()
        .zip(labels)
        .map(|(&e, &y)| y * e - softplus(e))
        .sum()
}

/// Bernoulli log-likelihood Σ yη − log(1 + e^η).
pub fn logistic_loglik(design: &DesignMatrix, labels: &[f64], coef: &[f64]) -> f64 {
    loglik_from_eta(&linear_predictor(design.values(), coef), labels)
}

/// Score X'(y − p).
pub fn logistic_score(design: &DesignMatrix, labels: &[f64], coef: &[f64]) -> Vec<f64> {
    let resid: Vec<f64> = linear_predictor(design.values(), coef)
        .iter()
        .zip(labels)
        .map(|(&e, &y)| y - sigmoid(e))
        .collect();
    cross(design.values(), &resid)
}

fn check_inputs(design: &DesignMatrix, labels: &[f64]) -> Result<()> {
    let n = design.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} design rows",
            labels.len()
        )));
    }
    if design.ncols() >= n {
        return Err(Error::InvalidArgument(format!(
            "{} features for {n} observations",
            design.ncols()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let ones = labels.iter().filter(|&&y| y == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::InvalidArgument(
            "labels must contain both classes".into(),
        ));
    }
    Ok(())
}

/// Logistic regression by Newton–Raphson (IRLS) with step halving.
pub fn fit_logistic(
    design: &DesignMatrix,
    labels: &[f64],
    options: &FitOptions,
) -> Result<LogisticFit> {
    fit_logistic_from(design, labels, options, None)
}

/// As [`fit_logistic`], starting from `start` when given.
pub(crate) fn fit_logistic_from(
    design: &DesignMatrix,
    labels: &[f64],
    options: &FitOptions,
    start: Option<&[f64]>,
) -> Result<LogisticFit> {
    check_inputs(design, labels)?;
    let x = design.values();
    let n = x.nrows();
    let q = x.ncols();
    let rms = column_rms(x);

    let mut coef = match start {
        Some(s) if s.len() == q && s.iter().all(|v| v.is_finite()) => s.to_vec(),
        _ => {
            let mut c = vec![0.0; q];
            if let Some(j) = design
                .names()
                .iter()
                .position(|n| n == crate::panel::INTERCEPT)
            {
                let prev = labels.iter().sum::<f64>() / n as f64;
                c[j] = (prev / (1.0 - prev)).ln();
            }
            c
        }
    };
    let mut eta = linear_predictor(x, &coef);
    let mut ll = loglik_from_eta(&eta, labels);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut score_norm;

    loop {
        let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid: Vec<f64> = labels.iter().zip(&probs).map(|(y, p)| y - p).collect();
        let score = cross(x, &resid);
        score_norm = scaled_norm(&score, &rms, n);
        if score_norm < options.tol {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        iterations += 1;
        let weights: Vec<f64> = probs
            .iter()
            .map(|p| (p * (1.0 - p)).max(PROB_CLAMP))
            .collect();
        let step = newton_direction(x, &weights, &score)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = coef.iter().zip(&step).map(|(c, s)| c + t * s).collect();
            let trial_eta = linear_predictor(x, &trial);
            let trial_ll = loglik_from_eta(&trial_eta, labels);
            if trial_ll >= ll - ll_slack(ll) {
                coef = trial;
                eta = trial_eta;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(ll);
    }

    // Under separation the likelihood keeps rising as coefficients diverge;
    // the score then vanishes without the fit being identified.
    let pinned = eta.iter().any(|e| e.abs() > SEPARATION_ETA);
    let separation_detected = pinned || ll > -1e-6;
    if separation_detected {
        converged = false;
    }

    Ok(LogisticFit {
        names: design.names().to_vec(),
        coefficients: coef,
        converged,
        iterations,
        log_likelihood: ll,
        score_norm,
        separation_detected,
        loglik_trace: trace,
        feature_spec: None,
    })
}

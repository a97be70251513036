//! Maximum-likelihood fitting of the nuisance models: logistic regression for
//! the propensity score and NB2/Poisson log-linear regression for the
//! outcome means, plus cross-validated selection of the power-series order.
//!
//! Convergence is judged on the *scaled score*: each column's score component
//! is divided by the column's root-mean-square and the vector norm by N. This
//! makes one tolerance meaningful for raw high-order power columns.

mod linalg;
mod logistic;
mod negbin;
mod select;

pub(crate) use logistic::fit_logistic_from;
pub use logistic::{fit_logistic, logistic_loglik, logistic_score, LogisticFit};
pub(crate) use negbin::fit_negbin_from;
pub use negbin::{
    fit_negbin, fit_negbin_fixed, fit_poisson, negbin_loglik, negbin_score, CountFamily, NegBinFit,
};
pub use select::{select_power_order, CvScheme, PowerOrderSelection};

use serde::{Deserialize, Serialize};

/// Lower/upper clamp for fitted probabilities.
pub const PROB_CLAMP: f64 = 1e-12;

/// Dispersion above which an NB2 fit is reported as Poisson.
pub const MAX_DISPERSION: f64 = 1e8;

/// Iteration controls shared by all fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Tolerance on the scaled score norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

//! Double-robust difference-in-differences estimation for two-period,
//! two-group panels with count outcomes.
//!
//! The crate estimates the counterfactual mean θ₀ of the treated group in the
//! after period with four estimators (direct, outcome regression, propensity
//! weighting and double-robust), pairs each with the moment estimate of the
//! observed treated mean θ₁, and reports the additive (CFD = θ₁ − θ₀) and
//! ratio (CMF = θ₁/θ₀) effects on the treated, with percentile bootstrap
//! intervals, balance/overlap/placebo diagnostics and a Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod panel;
pub mod rng;
pub mod sim;

pub use bootstrap::{
    bootstrap_ci, bootstrap_many, BootstrapConfig, BootstrapResult, FailurePolicy,
};
pub use diagnostics::{
    compute_balance, compute_overlap, influence_variance_comparison, placebo_evaluation,
    BalanceReport, InfluenceDiagnostics, OverlapReport, PlaceboReport, TrendAdvisory,
};
pub use error::{Error, Result};
pub use estimators::{
    estimate, estimate_effect, fit_nuisance, DrForm, EffectEstimate, EstimationWarning, Estimator,
    NuisanceBundle, NuisanceSpecs,
};
pub use glm::{CountFamily, FitOptions, LogisticFit, NegBinFit};
pub use panel::{
    expand_features, CsvSchema, DesignMatrix, FeatureSpec, MissingPolicy, OutcomeFamily,
    PanelDataset, PanelUnit,
};
pub use sim::{DgpParams, MetricRow, ModelSpec, SimulationScenario};

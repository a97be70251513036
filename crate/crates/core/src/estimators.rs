//! Estimators of θ₁ = E[Y_{t+1} | G=1] and of the counterfactual mean
//! θ₀ = E[Y_{t+1}(0) | G=1], and their assembly into CFD/CMF effects.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{fit_logistic_from, fit_negbin_from, FitOptions, LogisticFit, NegBinFit};
use crate::panel::{expand_features, FeatureSpec, OutcomeFamily, PanelDataset};

/// Estimator of θ₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Direct,
    Regression,
    Weighting,
    DoubleRobust,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Direct,
        Estimator::Regression,
        Estimator::Weighting,
        Estimator::DoubleRobust,
    ];

    pub fn needs_propensity(self) -> bool {
        matches!(self, Estimator::Weighting | Estimator::DoubleRobust)
    }

    pub fn needs_outcome(self) -> bool {
        matches!(self, Estimator::Regression | Estimator::DoubleRobust)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Direct => "direct",
            Estimator::Regression => "regression",
            Estimator::Weighting => "weighting",
            Estimator::DoubleRobust => "double_robust",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Estimator::Direct),
            "regression" | "reg" => Ok(Estimator::Regression),
            "weighting" | "wt" => Ok(Estimator::Weighting),
            "double_robust" | "double-robust" | "dr" => Ok(Estimator::DoubleRobust),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator `{other}`"
            ))),
        }
    }
}

/// The two algebraically equivalent ways of writing the double-robust θ₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrForm {
    /// Weighting estimator plus an outcome-model augmentation.
    #[default]
    WeightingAugmented,
    /// Regression estimator plus weighted control residual trends.
    RegressionAugmented,
}

/// Fitted nuisance quantities evaluated at every unit of one dataset.
///
/// Outcome models are fitted on control units only; `mu_hat`/`nu_hat` hold
/// their predictions at all units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NuisanceBundle {
    pub propensity: Option<LogisticFit>,
    pub outcome_before: Option<NegBinFit>,
    pub outcome_after: Option<NegBinFit>,
    /// ê(Xᵢ).
    pub propensity_scores: Option<Vec<f64>>,
    /// μ(Xᵢ; β̂), before-period control mean.
    pub mu_hat: Option<Vec<f64>>,
    /// ν(Xᵢ; γ̂), after-period control mean.
    pub nu_hat: Option<Vec<f64>>,
    /// 1 for treated units, ê/(1 − ê) for controls (1 everywhere without a
    /// propensity model).
    pub weights: Vec<f64>,
}

impl NuisanceBundle {
    /// Bundle from precomputed per-unit values.
    pub fn from_values(
        data: &PanelDataset,
        propensity_scores: Option<Vec<f64>>,
        mu_hat: Option<Vec<f64>>,
        nu_hat: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = data.len();
        for (name, v) in [
            ("propensity scores", &propensity_scores),
            ("mu_hat", &mu_hat),
            ("nu_hat", &nu_hat),
        ] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has length {}, dataset has {n} units",
                        v.len()
                    )));
                }
            }
        }
        let weights = match &propensity_scores {
            Some(e) => att_weights(data, e)?,
            None => vec![1.0; n],
        };
        Ok(Self {
            propensity: None,
            outcome_before: None,
            outcome_after: None,
            propensity_scores,
            mu_hat,
            nu_hat,
            weights,
        })
    }

    fn scores(&self) -> Result<&[f64]> {
        self.propensity_scores
            .as_deref()
            .ok_or(Error::MissingNuisance("propensity score"))
    }

    fn outcome_means(&self) -> Result<(&[f64], &[f64])> {
        let mu = self
            .mu_hat
            .as_deref()
            .ok_or(Error::MissingNuisance("before-period outcome model"))?;
        let nu = self
            .nu_hat
            .as_deref()
            .ok_or(Error::MissingNuisance("after-period outcome model"))?;
        Ok((mu, nu))
    }
}

/// ATT weights: 1 for treated units, e/(1 − e) for controls.
pub fn att_weights(data: &PanelDataset, scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != data.len() {
        return Err(Error::DimensionMismatch("propensity score length".into()));
    }
    data.units()
        .iter()
        .zip(scores)
        .map(|(u, &e)| {
            if u.treated {
                Ok(1.0)
            } else if e > 0.0 && e < 1.0 {
                Ok(e / (1.0 - e))
            } else {
                Err(Error::InvalidArgument(format!(
                    "control propensity {e} outside (0, 1)"
                )))
            }
        })
        .collect()
}

/// Feature specifications of the two nuisance models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceSpecs {
    pub propensity: FeatureSpec,
    pub outcome: FeatureSpec,
}

/// Which nuisance models to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NuisanceNeeds {
    pub propensity: bool,
    pub outcome: bool,
}

impl NuisanceNeeds {
    pub fn for_estimators(estimators: &[Estimator]) -> Self {
        Self {
            propensity: estimators.iter().any(|e| e.needs_propensity()),
            outcome: estimators.iter().any(|e| e.needs_outcome()),
        }
    }
}

/// Fits the propensity model on all units and the before/after outcome models
/// on controls.
pub fn fit_nuisance(
    data: &PanelDataset,
    specs: &NuisanceSpecs,
    needs: NuisanceNeeds,
    options: &FitOptions,
) -> Result<NuisanceBundle> {
    fit_nuisance_from(data, specs, needs, options, None)
}

/// As [`fit_nuisance`], starting each model from the matching fit in `warm`
/// (typically the full-sample fit when refitting on a bootstrap resample).
pub fn fit_nuisance_from(
    data: &PanelDataset,
    specs: &NuisanceSpecs,
    needs: NuisanceNeeds,
    options: &FitOptions,
    warm: Option<&NuisanceBundle>,
) -> Result<NuisanceBundle> {
    let mut bundle = NuisanceBundle::from_values(data, None, None, None)?;
    if needs.propensity {
        let design = expand_features(data, &specs.propensity)?;
        let start = warm
            .and_then(|w| w.propensity.as_ref())
            .map(|f| f.coefficients.as_slice());
        let fit = fit_logistic_from(&design, &data.treatment_labels(), options, start)?
            .with_spec(specs.propensity.clone());
        let scores = fit.predict(&design)?;
        bundle.weights = att_weights(data, &scores)?;
        bundle.propensity_scores = Some(scores);
        bundle.propensity = Some(fit);
    }
    if needs.outcome {
        if data.outcome_family() != OutcomeFamily::Count {
            return Err(Error::InvalidArgument(
                "outcome regression models require count outcomes".into(),
            ));
        }
        let design = expand_features(data, &specs.outcome)?;
        let controls = data.control_indices();
        let control_design = design.select_rows(&controls);
        let before: Vec<f64> = controls.iter().map(|&i| data.units()[i].y_before).collect();
        let after: Vec<f64> = controls.iter().map(|&i| data.units()[i].y_after).collect();
        let mu = fit_negbin_from(
            &control_design,
            &before,
            options,
            warm_count(warm.and_then(|w| w.outcome_before.as_ref())),
        )?
        .with_spec(specs.outcome.clone());
        let nu = fit_negbin_from(
            &control_design,
            &after,
            options,
            warm_count(warm.and_then(|w| w.outcome_after.as_ref())),
        )?
        .with_spec(specs.outcome.clone());
        bundle.mu_hat = Some(mu.predict_mean(&design)?);
        bundle.nu_hat = Some(nu.predict_mean(&design)?);
        bundle.outcome_before = Some(mu);
        bundle.outcome_after = Some(nu);
    }
    Ok(bundle)
}

fn warm_count(fit: Option<&NegBinFit>) -> Option<(&[f64], f64)> {
    fit.map(|f| (f.coefficients.as_slice(), f.dispersion))
}

/// Σ G Y_{t+1} / Σ G.
pub fn estimate_theta1(data: &PanelDataset) -> f64 {
    let sum: f64 = data
        .units()
        .iter()
        .filter(|u| u.treated)
        .map(|u| u.y_after)
        .sum();
    sum / data.n_treated() as f64
}

fn treated_before_mean(data: &PanelDataset) -> f64 {
    let sum: f64 = data
        .units()
        .iter()
        .filter(|u| u.treated)
        .map(|u| u.y_before)
        .sum();
    sum / data.n_treated() as f64
}

/// Treated before-mean plus the raw control trend.
pub fn estimate_theta0_direct(data: &PanelDataset) -> f64 {
    let trend: f64 = data
        .units()
        .iter()
        .filter(|u| !u.treated)
        .map(|u| u.y_after - u.y_before)
        .sum();
    treated_before_mean(data) + trend / data.n_control() as f64
}

/// Treated before-mean plus the model-predicted control trend ν̂ − μ̂
/// averaged over treated units.
pub fn estimate_theta0_regression(data: &PanelDataset, nuisance: &NuisanceBundle) -> Result<f64> {
    let (mu, nu) = nuisance.outcome_means()?;
    let predicted: f64 = data
        .units()
        .iter()
        .enumerate()
        .filter(|(_, u)| u.treated)
        .map(|(i, _)| nu[i] - mu[i])
        .sum();
    Ok(treated_before_mean(data) + predicted / data.n_treated() as f64)
}

/// [Σ G Y_t w + Σ (1 − G)(Y_{t+1} − Y_t) w] / Σ G.
pub fn estimate_theta0_weighting(data: &PanelDataset, nuisance: &NuisanceBundle) -> Result<f64> {
    nuisance.scores()?;
    let w = &nuisance.weights;
    let total: f64 = data
        .units()
        .iter()
        .zip(w)
        .map(|(u, &w)| {
            if u.treated {
                u.y_before * w
            } else {
                (u.y_after - u.y_before) * w
            }
        })
        .sum();
    Ok(total / data.n_treated() as f64)
}

/// Double-robust θ₀ in either algebraic form.
pub fn estimate_theta0_dr(
    data: &PanelDataset,
    nuisance: &NuisanceBundle,
    form: DrForm,
) -> Result<f64> {
    let e = nuisance.scores()?;
    let (mu, nu) = nuisance.outcome_means()?;
    let n1 = data.n_treated() as f64;
    match form {
        DrForm::WeightingAugmented => {
            let base = estimate_theta0_weighting(data, nuisance)?;
            let aug: f64 = data
                .units()
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    let g = if u.treated { 1.0 } else { 0.0 };
                    (g - e[i]) * (nu[i] - mu[i]) / (1.0 - e[i])
                })
                .sum();
            Ok(base + aug / n1)
        }
        DrForm::RegressionAugmented => {
            let base = estimate_theta0_regression(data, nuisance)?;
            let aug: f64 = data
                .units()
                .iter()
                .enumerate()
                .filter(|(_, u)| !u.treated)
                .map(|(i, u)| {
                    let r_after = u.y_after - nu[i];
                    let r_before = u.y_before - mu[i];
                    (r_after - r_before) * nuisance.weights[i]
                })
                .sum();
            Ok(base + aug / n1)
        }
    }
}

/// Non-fatal conditions attached to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimationWarning {
    /// Control ATT weights above the threshold.
    ExtremeWeights {
        threshold: f64,
        count: usize,
        max_weight: f64,
    },
    /// θ̂₀ ≤ 0, so the CMF is undefined.
    NegativeTheta0 { theta0: f64 },
    /// A nuisance fit stopped before meeting the tolerance.
    NonConvergence { model: String },
    /// An NB2 outcome model found no overdispersion and was fitted as Poisson.
    PoissonFallback { model: String },
    /// Treated units whose propensity exceeds every control's; outcome-model
    /// predictions there are extrapolations.
    Extrapolation { count: usize, share: f64 },
}

/// Point estimate of the treatment effect on the treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: Estimator,
    pub theta1: f64,
    pub theta0: f64,
    /// θ₁ − θ₀.
    pub cfd: f64,
    /// θ₁ / θ₀; NaN when `cmf_defined` is false.
    pub cmf: f64,
    pub cmf_defined: bool,
    pub ci_cfd: Option<(f64, f64)>,
    pub ci_cmf: Option<(f64, f64)>,
    #[serde(default)]
    pub warnings: Vec<EstimationWarning>,
}

impl EffectEstimate {
    pub fn new(estimator: Estimator, theta1: f64, theta0: f64) -> Self {
        let cmf_defined = theta0 > 0.0;
        Self {
            estimator,
            theta1,
            theta0,
            cfd: theta1 - theta0,
            cmf: if cmf_defined {
                theta1 / theta0
            } else {
                f64::NAN
            },
            cmf_defined,
            ci_cfd: None,
            ci_cmf: None,
            warnings: Vec::new(),
        }
    }

    /// ln CMF when defined.
    pub fn log_cmf(&self) -> Option<f64> {
        (self.cmf_defined && self.cmf > 0.0).then(|| self.cmf.ln())
    }
}

/// Knobs for [`estimate_effect_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectOptions {
    pub dr_form: DrForm,
    pub extreme_weight_threshold: f64,
}

impl Default for EffectOptions {
    fn default() -> Self {
        Self {
            dr_form: DrForm::WeightingAugmented,
            extreme_weight_threshold: 50.0,
        }
    }
}

/// Computes θ̂₁ and the chosen θ̂₀ and assembles CFD/CMF.
pub fn estimate_effect(
    data: &PanelDataset,
    estimator: Estimator,
    nuisance: &NuisanceBundle,
) -> Result<EffectEstimate> {
    estimate_effect_with(data, estimator, nuisance, &EffectOptions::default())
}

pub fn estimate_effect_with(
    data: &PanelDataset,
    estimator: Estimator,
    nuisance: &NuisanceBundle,
    options: &EffectOptions,
) -> Result<EffectEstimate> {
    let theta0 = match estimator {
        Estimator::Direct => estimate_theta0_direct(data),
        Estimator::Regression => estimate_theta0_regression(data, nuisance)?,
        Estimator::Weighting => estimate_theta0_weighting(data, nuisance)?,
        Estimator::DoubleRobust => {
            let value = estimate_theta0_dr(data, nuisance, options.dr_form)?;
            if cfg!(debug_assertions) {
                let other = match options.dr_form {
                    DrForm::WeightingAugmented => DrForm::RegressionAugmented,
                    DrForm::RegressionAugmented => DrForm::WeightingAugmented,
                };
                let check = estimate_theta0_dr(data, nuisance, other)?;
                debug_assert!(
                    (value - check).abs() <= 1e-9 * (1.0 + value.abs()),
                    "double-robust forms disagree: {value} vs {check}"
                );
            }
            value
        }
    };
    let mut est = EffectEstimate::new(estimator, estimate_theta1(data), theta0);
    if !est.cmf_defined {
        est.warnings
            .push(EstimationWarning::NegativeTheta0 { theta0 });
    }
    if estimator.needs_propensity() {
        let heavy: Vec<f64> = data
            .units()
            .iter()
            .zip(&nuisance.weights)
            .filter(|(u, &w)| !u.treated && w > options.extreme_weight_threshold)
            .map(|(_, &w)| w)
            .collect();
        if !heavy.is_empty() {
            est.warnings.push(EstimationWarning::ExtremeWeights {
                threshold: options.extreme_weight_threshold,
                count: heavy.len(),
                max_weight: heavy.iter().copied().fold(f64::MIN, f64::max),
            });
        }
        if let Some(fit) = &nuisance.propensity {
            if !fit.converged {
                est.warnings.push(EstimationWarning::NonConvergence {
                    model: "propensity".into(),
                });
            }
        }
    }
    if estimator.needs_outcome() {
        for (name, fit) in [
            ("outcome_before", &nuisance.outcome_before),
            ("outcome_after", &nuisance.outcome_after),
        ] {
            if let Some(fit) = fit {
                if !fit.converged {
                    est.warnings
                        .push(EstimationWarning::NonConvergence { model: name.into() });
                }
                if fit.poisson_fallback {
                    est.warnings
                        .push(EstimationWarning::PoissonFallback { model: name.into() });
                }
            }
        }
        if let Some(scores) = &nuisance.propensity_scores {
            let count = extrapolated_treated(data, scores);
            if count > 0 {
                est.warnings.push(EstimationWarning::Extrapolation {
                    count,
                    share: count as f64 / data.n_treated() as f64,
                });
            }
        }
    }
    Ok(est)
}

/// Treated units with propensity above the control maximum.
pub fn extrapolated_treated(data: &PanelDataset, scores: &[f64]) -> usize {
    let control_max = data
        .units()
        .iter()
        .zip(scores)
        .filter(|(u, _)| !u.treated)
        .map(|(_, &e)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    data.units()
        .iter()
        .zip(scores)
        .filter(|(u, &e)| u.treated && e > control_max)
        .count()
}

/// Fits whatever nuisance models `estimator` needs and estimates the effect.
pub fn estimate(
    data: &PanelDataset,
    estimator: Estimator,
    specs: &NuisanceSpecs,
    options: &FitOptions,
) -> Result<EffectEstimate> {
    let needs = NuisanceNeeds::for_estimators(&[estimator]);
    let nuisance = fit_nuisance(data, specs, needs, options)?;
    estimate_effect(data, estimator, &nuisance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: &[(f64, f64, bool)]) -> PanelDataset {
        let b: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let a: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let g: Vec<bool> = rows.iter().map(|r| r.2).collect();
        PanelDataset::from_columns(&b, &a, &g, &[], OutcomeFamily::Count).unwrap()
    }

    #[test]
    fn theta1_is_treated_after_mean() {
        let d = data(&[(0.0, 3.0, true), (1.0, 4.0, true), (2.0, 9.0, false)]);
        assert_eq!(estimate_theta1(&d), 3.5);
        let d = data(&[(1.0, 0.0, true), (1.0, 0.0, true), (2.0, 9.0, false)]);
        assert_eq!(estimate_theta1(&d), 0.0);
    }

    #[test]
    fn direct_hand_example() {
        // treated before {1,2}; controls (0,1),(2,2),(1,4)
        let d = data(&[
            (1.0, 0.0, true),
            (2.0, 0.0, true),
            (0.0, 1.0, false),
            (2.0, 2.0, false),
            (1.0, 4.0, false),
        ]);
        assert!((estimate_theta0_direct(&d) - (1.5 + 4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn direct_with_no_control_trend_is_treated_before_mean() {
        let d = data(&[
            (3.0, 0.0, true),
            (5.0, 1.0, true),
            (2.0, 2.0, false),
            (7.0, 7.0, false),
        ]);
        assert_eq!(estimate_theta0_direct(&d), 4.0);
    }

    #[test]
    fn direct_two_units() {
        let d = data(&[(5.0, 0.0, true), (2.0, 3.0, false)]);
        assert_eq!(estimate_theta0_direct(&d), 6.0);
    }

    #[test]
    fn regression_with_equal_models_is_treated_before_mean() {
        let d = data(&[(3.0, 0.0, true), (5.0, 1.0, true), (2.0, 6.0, false)]);
        let m = vec![0.7, 1.9, 2.5];
        let nb = NuisanceBundle::from_values(&d, None, Some(m.clone()), Some(m)).unwrap();
        assert_eq!(estimate_theta0_regression(&d, &nb).unwrap(), 4.0);
    }

    #[test]
    fn missing_nuisance_is_reported() {
        let d = data(&[(3.0, 0.0, true), (2.0, 6.0, false)]);
        let nb = NuisanceBundle::from_values(&d, None, None, None).unwrap();
        assert!(matches!(
            estimate_theta0_regression(&d, &nb),
            Err(Error::MissingNuisance(_))
        ));
        assert!(matches!(
            estimate_theta0_weighting(&d, &nb),
            Err(Error::MissingNuisance(_))
        ));
        assert!(matches!(
            estimate_theta0_dr(&d, &nb, DrForm::WeightingAugmented),
            Err(Error::MissingNuisance(_))
        ));
    }

    #[test]
    fn weighting_with_zero_control_trends() {
        let d = data(&[
            (3.0, 0.0, true),
            (5.0, 1.0, true),
            (2.0, 2.0, false),
            (1.0, 1.0, false),
        ]);
        let e = vec![0.5, 0.6, 0.2, 0.9];
        let nb = NuisanceBundle::from_values(&d, Some(e), None, None).unwrap();
        assert_eq!(estimate_theta0_weighting(&d, &nb).unwrap(), 4.0);
    }

    #[test]
    fn dr_collapses_when_trend_predictions_vanish() {
        let d = data(&[
            (3.0, 0.0, true),
            (5.0, 1.0, true),
            (2.0, 4.0, false),
            (1.0, 0.0, false),
        ]);
        let e = vec![0.4; 4];
        let m = vec![1.0, 2.0, 3.0, 4.0];
        let nb = NuisanceBundle::from_values(&d, Some(e), Some(m.clone()), Some(m)).unwrap();
        let wt = estimate_theta0_weighting(&d, &nb).unwrap();
        let dr = estimate_theta0_dr(&d, &nb, DrForm::WeightingAugmented).unwrap();
        assert_eq!(dr, wt);
    }

    #[test]
    fn dr_collapses_to_regression_with_zero_residuals() {
        let d = data(&[
            (3.0, 0.0, true),
            (5.0, 1.0, true),
            (2.0, 4.0, false),
            (1.0, 0.0, false),
        ]);
        let e = vec![0.3, 0.6, 0.2, 0.7];
        // Interpolating models on controls.
        let mu = vec![2.5, 1.5, 2.0, 1.0];
        let nu = vec![0.5, 3.0, 4.0, 0.0];
        let nb = NuisanceBundle::from_values(&d, Some(e), Some(mu), Some(nu)).unwrap();
        let reg = estimate_theta0_regression(&d, &nb).unwrap();
        let dr = estimate_theta0_dr(&d, &nb, DrForm::RegressionAugmented).unwrap();
        assert_eq!(dr, reg);
        let dr10 = estimate_theta0_dr(&d, &nb, DrForm::WeightingAugmented).unwrap();
        assert!((dr10 - reg).abs() < 1e-12);
    }

    #[test]
    fn null_effect_direct() {
        let d = data(&[
            (2.0, 2.0, true),
            (4.0, 4.0, true),
            (2.0, 2.0, false),
            (4.0, 4.0, false),
        ]);
        let nb = NuisanceBundle::from_values(&d, None, None, None).unwrap();
        let est = estimate_effect(&d, Estimator::Direct, &nb).unwrap();
        assert_eq!(est.cfd, 0.0);
        assert_eq!(est.cmf, 1.0);
        assert!(est.cmf_defined);
    }

    #[test]
    fn zero_theta0_leaves_cmf_undefined() {
        let d = data(&[(0.0, 1.0, true), (1.0, 1.0, false)]);
        let nb = NuisanceBundle::from_values(&d, None, None, None).unwrap();
        let est = estimate_effect(&d, Estimator::Direct, &nb).unwrap();
        assert_eq!(est.theta0, 0.0);
        assert!(!est.cmf_defined);
        assert!(est.cmf.is_nan());
        assert_eq!(est.cfd, est.theta1 - est.theta0);
        assert!(matches!(
            est.warnings[0],
            EstimationWarning::NegativeTheta0 { .. }
        ));
    }

    #[test]
    fn extreme_weights_are_flagged() {
        let d = data(&[(3.0, 0.0, true), (2.0, 4.0, false), (1.0, 0.0, false)]);
        let e = vec![0.5, 0.99, 0.2];
        let nb = NuisanceBundle::from_values(&d, Some(e), None, None).unwrap();
        let est = estimate_effect(&d, Estimator::Weighting, &nb).unwrap();
        assert!(est
            .warnings
            .iter()
            .any(|w| matches!(w, EstimationWarning::ExtremeWeights { count: 1, .. })));
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.as_str().parse::<Estimator>().unwrap(), e);
        }
        assert!("nope".parse::<Estimator>().is_err());
    }
}

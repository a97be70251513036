//! Simulation design with a binary and a continuous covariate, NB2 outcome
//! counts and a quadratic-logit propensity, plus the Monte Carlo runner that
//! scores estimators by bias, RMSE and bootstrap coverage.
//!
//! Covariates: X₁ ~ Bernoulli(0.25), X₂ | X₁ ~ Normal(2 + 6X₁, 2²).
//! Propensity: logit e(X) = −2 + X₁ − 0.2X₂ + 0.04X₂².
//! Outcomes: NB2 with φ = 2.5 and log-quadratic means μ₀₀, μ₀₁ (before, by
//! group) and ν₀₀, ν₁₁ (after, control / treated-under-treatment). The
//! treated counterfactual after-mean is ν₀₁ = ν₀₀ + μ₀₁ − μ₀₀.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_map, summarize, BootstrapConfig, ReplicateEstimate};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_effect, fit_nuisance_from, EffectEstimate, Estimator, NuisanceBundle, NuisanceNeeds,
    NuisanceSpecs,
};
use crate::glm::FitOptions;
use crate::panel::{FeatureSpec, OutcomeFamily, PanelDataset, PanelUnit};
use crate::rng::{derive_seed, substream, StreamRng};

/// Coefficients of exp(c₀ + c₁X₁ + c₂X₂ + c₃X₂²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCoefs {
    pub intercept: f64,
    pub x1: f64,
    pub x2: f64,
    pub x2_sq: f64,
}

impl MeanCoefs {
    pub const fn new(intercept: f64, x1: f64, x2: f64, x2_sq: f64) -> Self {
        Self {
            intercept,
            x1,
            x2,
            x2_sq,
        }
    }

    pub fn linear_predictor(&self, x1: f64, x2: f64) -> f64 {
        self.intercept + self.x1 * x1 + self.x2 * x2 + self.x2_sq * x2 * x2
    }

    pub fn mean(&self, x1: f64, x2: f64) -> f64 {
        self.linear_predictor(x1, x2).exp()
    }
}

/// What treated units experience in the after period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatedAfter {
    /// Mean ν₁₁: the treatment acts.
    #[default]
    Treatment,
    /// Mean ν₀₁: no effect, trends parallel. Used for placebo checks.
    NoEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpParams {
    pub x1_prob: f64,
    pub x2_mean_base: f64,
    pub x2_mean_x1: f64,
    pub x2_sd: f64,
    /// On (1, X₁, X₂, X₂²).
    pub ps_coefs: MeanCoefs,
    pub dispersion: f64,
    pub mu00: MeanCoefs,
    pub mu01: MeanCoefs,
    pub nu00: MeanCoefs,
    pub nu11: MeanCoefs,
    pub treated_after: TreatedAfter,
    pub true_cfd: f64,
    pub true_log_cmf: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            x1_prob: 0.25,
            x2_mean_base: 2.0,
            x2_mean_x1: 6.0,
            x2_sd: 2.0,
            ps_coefs: MeanCoefs::new(-2.0, 1.0, -0.2, 0.04),
            dispersion: 2.5,
            mu00: MeanCoefs::new(-2.0, 0.4, 0.43, -0.022),
            mu01: MeanCoefs::new(-3.0, 0.3, 0.43, -0.022),
            nu00: MeanCoefs::new(-1.9, 0.5, 0.43, -0.022),
            nu11: MeanCoefs::new(-2.5, 0.1, 0.43, -0.022),
            treated_after: TreatedAfter::Treatment,
            true_cfd: -0.078,
            true_log_cmf: 0.862f64.ln(),
        }
    }
}

impl DgpParams {
    /// Same design with no treatment effect: treated after-counts follow ν₀₁.
    pub fn placebo() -> Self {
        Self {
            treated_after: TreatedAfter::NoEffect,
            true_cfd: 0.0,
            true_log_cmf: 0.0,
            ..Self::default()
        }
    }

    pub fn propensity(&self, x1: f64, x2: f64) -> f64 {
        let eta = self.ps_coefs.linear_predictor(x1, x2);
        1.0 / (1.0 + (-eta).exp())
    }

    /// ν₀₁ = ν₀₀ + μ₀₁ − μ₀₀.
    pub fn nu01(&self, x1: f64, x2: f64) -> f64 {
        self.nu00.mean(x1, x2) + self.mu01.mean(x1, x2) - self.mu00.mean(x1, x2)
    }

    fn treated_after_mean(&self, x1: f64, x2: f64) -> f64 {
        match self.treated_after {
            TreatedAfter::Treatment => self.nu11.mean(x1, x2),
            TreatedAfter::NoEffect => self.nu01(x1, x2),
        }
    }

    /// Checks parameter ranges and positivity of ν₀₁ on X₂ within eight
    /// standard deviations of either conditional mean.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.x1_prob) {
            return Err(Error::InvalidArgument("x1_prob outside [0, 1]".into()));
        }
        if !(self.x2_sd > 0.0) || !(self.dispersion > 0.0) {
            return Err(Error::InvalidArgument(
                "x2_sd and dispersion must be positive".into(),
            ));
        }
        for x1 in [0.0, 1.0] {
            let center = self.x2_mean_base + self.x2_mean_x1 * x1;
            for k in 0..=1600 {
                let x2 = center + self.x2_sd * (k as f64 / 100.0 - 8.0);
                let v = self.nu01(x1, x2);
                if !(v > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "counterfactual mean not positive at x1={x1}, x2={x2:.3}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw_covariates(&self, rng: &mut StreamRng, normal: &Normal<f64>) -> (f64, f64) {
        let x1 = if rng.random::<f64>() < self.x1_prob {
            1.0
        } else {
            0.0
        };
        let x2 = self.x2_mean_base + self.x2_mean_x1 * x1 + normal.sample(rng);
        (x1, x2)
    }
}

/// One NB2(mean, φ) draw as a gamma–Poisson mixture.
pub fn sample_negbin(rng: &mut StreamRng, mean: f64, dispersion: f64) -> f64 {
    if !(mean > 0.0) {
        return 0.0;
    }
    let rate = Gamma::new(dispersion, mean / dispersion)
        .expect("positive gamma parameters")
        .sample(rng);
    if !(rate > 0.0) {
        return 0.0;
    }
    Poisson::new(rate)
        .expect("positive Poisson rate")
        .sample(rng)
}

/// True nuisance values per unit, known only under simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleNuisance {
    pub propensity: Vec<f64>,
    /// μ₀₀(Xᵢ): control before-period mean.
    pub mu: Vec<f64>,
    /// ν₀₀(Xᵢ): control after-period mean.
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedReplicate {
    pub data: PanelDataset,
    pub oracle: OracleNuisance,
    /// Whole-sample redraws needed to get both groups.
    pub retries: usize,
}

/// Redraws allowed when a sample lacks a group.
pub const MAX_GROUP_RETRIES: usize = 100;

/// Covariate names used by simulated datasets.
pub const SIM_COVARIATES: [&str; 2] = ["x1", "x2"];

/// Draws one dataset of `n` units.
pub fn generate_replicate(
    params: &DgpParams,
    n: usize,
    rng: &mut StreamRng,
) -> Result<SimulatedReplicate> {
    params.validate()?;
    let normal =
        Normal::new(0.0, params.x2_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut last = (0, 0);
    for retries in 0..=MAX_GROUP_RETRIES {
        let mut units = Vec::with_capacity(n);
        let mut oracle = OracleNuisance {
            propensity: Vec::with_capacity(n),
            mu: Vec::with_capacity(n),
            nu: Vec::with_capacity(n),
        };
        for i in 0..n {
            let (x1, x2) = params.draw_covariates(rng, &normal);
            let e = params.propensity(x1, x2);
            let treated = rng.random::<f64>() < e;
            let (m_before, m_after) = if treated {
                (params.mu01.mean(x1, x2), params.treated_after_mean(x1, x2))
            } else {
                (params.mu00.mean(x1, x2), params.nu00.mean(x1, x2))
            };
            let y_before = sample_negbin(rng, m_before, params.dispersion);
            let y_after = sample_negbin(rng, m_after, params.dispersion);
            units.push(PanelUnit {
                id: i.to_string(),
                y_before,
                y_after,
                treated,
                covariates: vec![x1, x2],
            });
            oracle.propensity.push(e);
            oracle.mu.push(params.mu00.mean(x1, x2));
            oracle.nu.push(params.nu00.mean(x1, x2));
        }
        let names = SIM_COVARIATES.iter().map(|s| s.to_string()).collect();
        match PanelDataset::new(units, names, OutcomeFamily::Count) {
            Ok(data) => {
                return Ok(SimulatedReplicate {
                    data,
                    oracle,
                    retries,
                })
            }
            Err(Error::DegenerateDesign {
                n_treated,
                n_control,
            }) => last = (n_treated, n_control),
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateDesign {
        n_treated: last.0,
        n_control: last.1,
    })
}

/// Large-sample values of the estimands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub theta1: f64,
    pub theta0: f64,
    pub cfd: f64,
    pub cmf: f64,
    pub treated_share: f64,
}

/// Monte Carlo integration of θ₁ = E[ν₁₁ | G=1] and θ₀ = E[ν₀₁ | G=1] with
/// `draws` covariate draws, weighting each draw by its propensity.
pub fn true_effects(params: &DgpParams, draws: usize, seed: u64) -> Result<TrueEffects> {
    params.validate()?;
    const CHUNK: usize = 100_000;
    let normal =
        Normal::new(0.0, params.x2_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<[f64; 3]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, &[c as u64]);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut acc = [0.0; 3];
            for _ in 0..len {
                let (x1, x2) = params.draw_covariates(&mut rng, &normal);
                let e = params.propensity(x1, x2);
                acc[0] += e;
                acc[1] += e * params.treated_after_mean(x1, x2);
                acc[2] += e * params.nu01(x1, x2);
            }
            acc
        })
        .collect();
    let mut total = [0.0; 3];
    for p in partial {
        for k in 0..3 {
            total[k] += p[k];
        }
    }
    let theta1 = total[1] / total[0];
    let theta0 = total[2] / total[0];
    Ok(TrueEffects {
        theta1,
        theta0,
        cfd: theta1 - theta0,
        cmf: theta1 / theta0,
        treated_share: total[0] / draws as f64,
    })
}

/// Whether a nuisance model uses the correct or the reduced feature set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Correct,
    Misspecified,
}

/// Which nuisance model to misspecify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceModel {
    Propensity,
    Outcome,
}

/// Correct feature set for either model: intercept, X₁, X₂, X₂².
pub fn correct_spec() -> FeatureSpec {
    FeatureSpec::linear(&["x1"]).with_power("x2", 2)
}

/// Drops linearly entered and log columns and truncates every power series to
/// its linear term. For the simulation design this leaves {1, X₂}.
pub fn misspecify_features(spec: &FeatureSpec) -> FeatureSpec {
    let mut out = spec.clone();
    out.base_columns.clear();
    out.log_transform.clear();
    for term in &mut out.power_orders {
        term.order = 1;
    }
    out
}

/// Misspecifies one model of a nuisance pair. The outcome spec is shared by
/// the before and after models, so both change together.
pub fn misspecify(specs: &NuisanceSpecs, which: NuisanceModel) -> NuisanceSpecs {
    let mut out = specs.clone();
    match which {
        NuisanceModel::Propensity => out.propensity = misspecify_features(&specs.propensity),
        NuisanceModel::Outcome => out.outcome = misspecify_features(&specs.outcome),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub n_units: usize,
    /// `None` when the estimator has no propensity model.
    pub ps_spec: Option<ModelSpec>,
    /// `None` when the estimator has no outcome model.
    pub outcome_spec: Option<ModelSpec>,
    pub estimator: Estimator,
    pub replicates: usize,
    pub bootstrap: BootstrapConfig,
    pub seed: u64,
}

impl SimulationScenario {
    /// Builds a scenario; spec switches irrelevant to `estimator` are dropped.
    pub fn new(
        estimator: Estimator,
        ps: ModelSpec,
        outcome: ModelSpec,
        n_units: usize,
        replicates: usize,
        bootstrap: BootstrapConfig,
        seed: u64,
    ) -> Self {
        Self {
            n_units,
            ps_spec: estimator.needs_propensity().then_some(ps),
            outcome_spec: estimator.needs_outcome().then_some(outcome),
            estimator,
            replicates,
            bootstrap,
            seed,
        }
    }

    pub fn label(&self) -> String {
        use ModelSpec::*;
        match (self.estimator, self.ps_spec, self.outcome_spec) {
            (Estimator::Direct, ..) => "Direct".into(),
            (Estimator::Regression, _, Some(Correct) | None) => "REG".into(),
            (Estimator::Regression, _, Some(Misspecified)) => "REG-mis".into(),
            (Estimator::Weighting, Some(Correct) | None, _) => "WT".into(),
            (Estimator::Weighting, Some(Misspecified), _) => "WT-mis".into(),
            (Estimator::DoubleRobust, ps, out) => {
                match (ps.unwrap_or(Correct), out.unwrap_or(Correct)) {
                    (Correct, Correct) => "DR".into(),
                    (Misspecified, Correct) => "DR-po".into(),
                    (Correct, Misspecified) => "DR-ps".into(),
                    (Misspecified, Misspecified) => "DR-mis".into(),
                }
            }
        }
    }

    fn key(&self) -> EstimateKey {
        EstimateKey {
            estimator: self.estimator,
            ps: self.ps_spec,
            outcome: self.outcome_spec,
        }
    }

    fn group_key(&self) -> (usize, usize, u64, String) {
        (
            self.n_units,
            self.replicates,
            self.seed,
            config_key(&self.bootstrap),
        )
    }
}

fn config_key(config: &BootstrapConfig) -> String {
    format!(
        "{}|{}|{}|{:?}",
        config.replicates,
        config.alpha.to_bits(),
        config.seed,
        config.failure_policy
    )
}

/// Labels of the nine standard scenarios in table order.
pub const SCENARIO_LABELS: [&str; 9] = [
    "Direct", "REG", "REG-mis", "WT", "WT-mis", "DR", "DR-po", "DR-ps", "DR-mis",
];

/// Resolves a table label to (estimator, ps spec, outcome spec).
pub fn scenario_from_label(label: &str) -> Result<(Estimator, ModelSpec, ModelSpec)> {
    use ModelSpec::*;
    Ok(match label.trim().to_ascii_lowercase().as_str() {
        "direct" => (Estimator::Direct, Correct, Correct),
        "reg" => (Estimator::Regression, Correct, Correct),
        "reg-mis" => (Estimator::Regression, Correct, Misspecified),
        "wt" => (Estimator::Weighting, Correct, Correct),
        "wt-mis" => (Estimator::Weighting, Misspecified, Correct),
        "dr" => (Estimator::DoubleRobust, Correct, Correct),
        "dr-po" => (Estimator::DoubleRobust, Misspecified, Correct),
        "dr-ps" => (Estimator::DoubleRobust, Correct, Misspecified),
        "dr-mis" => (Estimator::DoubleRobust, Misspecified, Misspecified),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}`"
            )))
        }
    })
}

/// The nine standard scenarios sharing one size/replicate/bootstrap setup.
pub fn standard_scenarios(
    n_units: usize,
    replicates: usize,
    bootstrap: &BootstrapConfig,
    seed: u64,
) -> Vec<SimulationScenario> {
    SCENARIO_LABELS
        .iter()
        .map(|l| {
            let (est, ps, out) = scenario_from_label(l).expect("known label");
            SimulationScenario::new(est, ps, out, n_units, replicates, bootstrap.clone(), seed)
        })
        .collect()
}

/// Monte Carlo performance of one scenario. Bias and RMSE are in the units
/// of the estimand; coverage is a percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub abs_bias_cfd: f64,
    pub rmse_cfd: f64,
    pub coverage_cfd: f64,
    pub abs_bias_log_cmf: f64,
    pub rmse_log_cmf: f64,
    pub coverage_log_cmf: f64,
    pub n_effective_replicates: usize,
    /// Replicates whose point CMF was undefined (excluded from CMF metrics).
    pub n_cmf_undefined: usize,
    pub mean_cfd: f64,
    pub mean_log_cmf: f64,
}

/// Per-replicate outcome of a scenario, for dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub replicate: usize,
    pub cfd: f64,
    pub log_cmf: Option<f64>,
    pub ci_cfd: (f64, f64),
    pub ci_cmf: Option<(f64, f64)>,
    pub n_boot_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub row: MetricRow,
    pub records: Vec<ReplicateRecord>,
    pub n_dropped: usize,
}

/// Largest fraction of dropped replicates before a study aborts.
pub const MAX_DROP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct EstimateKey {
    estimator: Estimator,
    ps: Option<ModelSpec>,
    outcome: Option<ModelSpec>,
}

fn spec_for(choice: ModelSpec) -> FeatureSpec {
    match choice {
        ModelSpec::Correct => correct_spec(),
        ModelSpec::Misspecified => misspecify_features(&correct_spec()),
    }
}

fn ok_fit(
    map: &BTreeMap<ModelSpec, Result<NuisanceBundle>>,
    spec: ModelSpec,
) -> Option<&NuisanceBundle> {
    map.get(&spec).and_then(|r| r.as_ref().ok())
}

/// Nuisance fits of one dataset keyed by specification choice.
struct SpecFits {
    propensity: BTreeMap<ModelSpec, Result<NuisanceBundle>>,
    outcome: BTreeMap<ModelSpec, Result<NuisanceBundle>>,
}

impl SpecFits {
    /// Fits each distinct model the keys need once, warm-starting from the
    /// matching fit in `warm`.
    fn fit(
        data: &PanelDataset,
        keys: &[EstimateKey],
        options: &FitOptions,
        warm: Option<&SpecFits>,
    ) -> Self {
        let mut fits = SpecFits {
            propensity: BTreeMap::new(),
            outcome: BTreeMap::new(),
        };
        for key in keys {
            if let Some(ps) = key.ps {
                fits.propensity.entry(ps).or_insert_with(|| {
                    let specs = NuisanceSpecs {
                        propensity: spec_for(ps),
                        outcome: FeatureSpec::intercept_only(),
                    };
                    let w = warm.and_then(|w| ok_fit(&w.propensity, ps));
                    let needs = NuisanceNeeds {
                        propensity: true,
                        outcome: false,
                    };
                    fit_nuisance_from(data, &specs, needs, options, w)
                });
            }
            if let Some(os) = key.outcome {
                fits.outcome.entry(os).or_insert_with(|| {
                    let specs = NuisanceSpecs {
                        propensity: FeatureSpec::intercept_only(),
                        outcome: spec_for(os),
                    };
                    let w = warm.and_then(|w| ok_fit(&w.outcome, os));
                    let needs = NuisanceNeeds {
                        propensity: false,
                        outcome: true,
                    };
                    fit_nuisance_from(data, &specs, needs, options, w)
                });
            }
        }
        fits
    }

    fn estimate(&self, data: &PanelDataset, keys: &[EstimateKey]) -> Vec<Result<EffectEstimate>> {
        keys.iter()
            .map(|key| {
                let mut bundle = NuisanceBundle::from_values(data, None, None, None)?;
                if let Some(ps) = key.ps {
                    let p = self.propensity[&ps].as_ref().map_err(Clone::clone)?;
                    bundle.propensity = p.propensity.clone();
                    bundle.propensity_scores = p.propensity_scores.clone();
                    bundle.weights = p.weights.clone();
                }
                if let Some(os) = key.outcome {
                    let o = self.outcome[&os].as_ref().map_err(Clone::clone)?;
                    bundle.outcome_before = o.outcome_before.clone();
                    bundle.outcome_after = o.outcome_after.clone();
                    bundle.mu_hat = o.mu_hat.clone();
                    bundle.nu_hat = o.nu_hat.clone();
                }
                estimate_effect(data, key.estimator, &bundle)
            })
            .collect()
    }
}

const DATA_STREAM: u64 = 0xDA7A;
const BOOT_STREAM: u64 = 0xB007;

/// Runs every scenario and returns one metric row per scenario, in input
/// order.
pub fn run_study(scenarios: &[SimulationScenario], params: &DgpParams) -> Result<Vec<MetricRow>> {
    Ok(
        run_study_detailed(scenarios, params, &FitOptions::default())?
            .into_iter()
            .map(|o| o.row)
            .collect(),
    )
}

/// As [`run_study`], keeping per-replicate records.
///
/// Replicate r of a scenario draws its data from substream (seed, r) and its
/// bootstrap resamples from a seed derived from (seed, r, bootstrap seed).
/// Scenarios with the same size, replicate count, seed and bootstrap setup
/// therefore see identical datasets and resamples, and are evaluated
/// together so each nuisance fit is computed once per dataset.
pub fn run_study_detailed(
    scenarios: &[SimulationScenario],
    params: &DgpParams,
    options: &FitOptions,
) -> Result<Vec<ScenarioOutcome>> {
    params.validate()?;
    for s in scenarios {
        s.bootstrap.validate()?;
        if s.replicates == 0 {
            return Err(Error::InvalidArgument(
                "scenario needs at least one replicate".into(),
            ));
        }
    }
    let mut groups: BTreeMap<(usize, usize, u64, String), Vec<usize>> = BTreeMap::new();
    for (i, s) in scenarios.iter().enumerate() {
        groups.entry(s.group_key()).or_default().push(i);
    }
    let mut results: Vec<Option<ScenarioOutcome>> = vec![None; scenarios.len()];
    for members in groups.values() {
        let first = &scenarios[members[0]];
        let mut keys: Vec<EstimateKey> = members.iter().map(|&i| scenarios[i].key()).collect();
        keys.sort();
        keys.dedup();
        let per_replicate = run_group(first, &keys, params, options)?;
        for &i in members {
            let k = keys
                .binary_search(&scenarios[i].key())
                .expect("key present");
            results[i] = Some(aggregate(&scenarios[i], params, &per_replicate, k)?);
        }
    }
    Ok(results
        .into_iter()
        .map(|r| r.expect("every scenario evaluated"))
        .collect())
}

type ReplicateSummary = Option<(EffectEstimate, Vec<Option<ReplicateEstimate>>)>;

fn run_group(
    setup: &SimulationScenario,
    keys: &[EstimateKey],
    params: &DgpParams,
    options: &FitOptions,
) -> Result<Vec<Vec<ReplicateSummary>>> {
    (0..setup.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(setup.seed, &[DATA_STREAM, r as u64]);
            let sim = generate_replicate(params, setup.n_units, &mut rng)?;
            let full = SpecFits::fit(&sim.data, keys, options, None);
            let points = full.estimate(&sim.data, keys);
            let boot_seed = derive_seed(setup.seed, &[BOOT_STREAM, r as u64, setup.bootstrap.seed]);
            let boots: Vec<Vec<Option<ReplicateEstimate>>> =
                bootstrap_map(&sim.data, setup.bootstrap.replicates, boot_seed, |sample| {
                    Ok(SpecFits::fit(sample, keys, options, Some(&full))
                        .estimate(sample, keys)
                        .into_iter()
                        .map(|r| {
                            r.ok().map(|e| ReplicateEstimate {
                                cfd: e.cfd,
                                cmf: e.cmf_defined.then_some(e.cmf),
                            })
                        })
                        .collect())
                })
                .into_iter()
                .map(|r| r.unwrap_or_else(|_| vec![None; keys.len()]))
                .collect();
            Ok(points
                .into_iter()
                .enumerate()
                .map(|(k, p)| {
                    p.ok()
                        .map(|est| (est, boots.iter().map(|row| row[k]).collect()))
                })
                .collect())
        })
        .collect()
}

fn aggregate(
    scenario: &SimulationScenario,
    params: &DgpParams,
    per_replicate: &[Vec<ReplicateSummary>],
    k: usize,
) -> Result<ScenarioOutcome> {
    let label = scenario.label();
    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (r, row) in per_replicate.iter().enumerate() {
        let Some((point, boots)) = &row[k] else {
            dropped += 1;
            continue;
        };
        match summarize(point.clone(), boots, &scenario.bootstrap) {
            Ok(res) => records.push(ReplicateRecord {
                scenario: label.clone(),
                replicate: r,
                cfd: res.point.cfd,
                log_cmf: res.point.log_cmf(),
                ci_cfd: res.ci_cfd,
                ci_cmf: res.ci_cmf,
                n_boot_failed: res.n_failed,
            }),
            Err(_) => dropped += 1,
        }
    }
    let total = per_replicate.len();
    if dropped as f64 > MAX_DROP_FRACTION * total as f64 {
        return Err(Error::TooManyFailures {
            failed: dropped,
            total,
            limit: 100.0 * MAX_DROP_FRACTION,
        });
    }
    let true_cmf = params.true_log_cmf.exp();
    let cfd: Vec<f64> = records.iter().map(|r| r.cfd).collect();
    let covered_cfd = records
        .iter()
        .filter(|r| r.ci_cfd.0 <= params.true_cfd && params.true_cfd <= r.ci_cfd.1)
        .count();
    let cmf_records: Vec<&ReplicateRecord> =
        records.iter().filter(|r| r.log_cmf.is_some()).collect();
    let log_cmf: Vec<f64> = cmf_records.iter().filter_map(|r| r.log_cmf).collect();
    let covered_cmf = cmf_records
        .iter()
        .filter(|r| matches!(r.ci_cmf, Some((lo, hi)) if lo <= true_cmf && true_cmf <= hi))
        .count();
    let (bias_cfd, rmse_cfd, mean_cfd) = bias_rmse(&cfd, params.true_cfd);
    let (bias_cmf, rmse_cmf, mean_cmf) = bias_rmse(&log_cmf, params.true_log_cmf);
    let row = MetricRow {
        scenario: label,
        abs_bias_cfd: bias_cfd,
        rmse_cfd,
        coverage_cfd: percent(covered_cfd, records.len()),
        abs_bias_log_cmf: bias_cmf,
        rmse_log_cmf: rmse_cmf,
        coverage_log_cmf: percent(covered_cmf, cmf_records.len()),
        n_effective_replicates: records.len(),
        n_cmf_undefined: records.len() - cmf_records.len(),
        mean_cfd,
        mean_log_cmf: mean_cmf,
    };
    Ok(ScenarioOutcome {
        row,
        records,
        n_dropped: dropped,
    })
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// (|mean − truth|, √mean((x − truth)²), mean).
pub fn bias_rmse(values: &[f64], truth: f64) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n;
    ((mean - truth).abs(), mse.sqrt(), mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspecified_spec_is_intercept_and_x2() {
        let mis = misspecify_features(&correct_spec());
        assert!(mis.include_intercept);
        assert!(mis.base_columns.is_empty());
        assert_eq!(mis.power_orders.len(), 1);
        assert_eq!(mis.power_orders[0].column, "x2");
        assert_eq!(mis.power_orders[0].order, 1);
        assert_eq!(misspecify_features(&mis), mis);
    }

    #[test]
    fn outcome_misspecification_touches_only_outcome() {
        let specs = NuisanceSpecs {
            propensity: correct_spec(),
            outcome: correct_spec(),
        };
        let m = misspecify(&specs, NuisanceModel::Outcome);
        assert_eq!(m.propensity, correct_spec());
        assert_eq!(m.outcome, misspecify_features(&correct_spec()));
        let p = misspecify(&specs, NuisanceModel::Propensity);
        assert_eq!(p.outcome, correct_spec());
    }

    #[test]
    fn labels_round_trip() {
        let cfg = BootstrapConfig::new(10, 0.05, 0);
        for (s, l) in standard_scenarios(100, 1, &cfg, 0)
            .iter()
            .zip(SCENARIO_LABELS)
        {
            assert_eq!(s.label(), l);
        }
    }

    #[test]
    fn direct_ignores_spec_switches() {
        let cfg = BootstrapConfig::new(10, 0.05, 0);
        let s = SimulationScenario::new(
            Estimator::Direct,
            ModelSpec::Misspecified,
            ModelSpec::Misspecified,
            10,
            1,
            cfg,
            0,
        );
        assert_eq!(s.ps_spec, None);
        assert_eq!(s.outcome_spec, None);
    }

    #[test]
    fn default_params_are_valid() {
        DgpParams::default().validate().unwrap();
        DgpParams::placebo().validate().unwrap();
    }

    #[test]
    fn hopeless_intercept_exhausts_retries() {
        let mut params = DgpParams::default();
        params.ps_coefs.intercept = -1e6;
        let mut rng = substream(1, &[]);
        let err = generate_replicate(&params, 50, &mut rng).unwrap_err();
        assert_eq!(
            err,
            Error::DegenerateDesign {
                n_treated: 0,
                n_control: 50
            }
        );
    }

    #[test]
    fn bias_rmse_single_value() {
        let (b, r, m) = bias_rmse(&[0.3], 0.1);
        assert!((b - 0.2).abs() < 1e-15);
        assert_eq!(b, r);
        assert_eq!(m, 0.3);
    }
}

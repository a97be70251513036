//! Nonparametric bootstrap with percentile intervals.
//!
//! Whole unit records are resampled, so the before/after correlation within
//! a unit is carried into every replicate, and all nuisance models are refit
//! on each replicate. Replicate `b` draws its indices from the substream
//! `(seed, b)`; results are collected by index and are therefore identical
//! for any thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_effect, fit_nuisance_from, EffectEstimate, Estimator, NuisanceBundle, NuisanceNeeds,
    NuisanceSpecs,
};
use crate::glm::FitOptions;
use crate::panel::PanelDataset;
use crate::rng::substream;

/// Only full nuisance refits are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    #[default]
    FullRefit,
}

/// Handling of replicates whose fit fails or whose resample lost a group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Drop failed replicates and count them.
    #[default]
    DropAndReport,
    /// Drop and count, but fail when the failed fraction exceeds the bound.
    AbortAtThreshold(f64),
}

/// Default abort fraction for [`FailurePolicy::AbortAtThreshold`].
pub const DEFAULT_ABORT_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub refit_policy: RefitPolicy,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 500,
            alpha: 0.05,
            seed: 0,
            refit_policy: RefitPolicy::FullRefit,
            failure_policy: FailurePolicy::DropAndReport,
        }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, alpha: f64, seed: u64) -> Self {
        Self {
            replicates,
            alpha,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("bootstrap needs B >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let FailurePolicy::AbortAtThreshold(f) = self.failure_policy {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "abort fraction {f} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// CFD and (when θ̂₀ > 0) CMF of one bootstrap replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub cfd: f64,
    pub cmf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Full-sample estimate, with `ci_cfd`/`ci_cmf` filled in.
    pub point: EffectEstimate,
    pub ci_cfd: (f64, f64),
    /// `None` when no replicate produced a defined CMF.
    pub ci_cmf: Option<(f64, f64)>,
    /// Successful replicates in replicate order.
    pub replicate_estimates: Vec<ReplicateEstimate>,
    pub n_failed: usize,
    pub n_cmf_undefined: usize,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed percentile interval at level 1 − alpha.
pub fn percentile_interval(values: &[f64], alpha: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some((
        quantile_type7(&sorted, alpha / 2.0),
        quantile_type7(&sorted, 1.0 - alpha / 2.0),
    ))
}

/// Resampled row indices of replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = substream(seed, &[b as u64]);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Evaluates `f` on every bootstrap resample. Degenerate resamples (a group
/// lost) come back as errors.
pub fn bootstrap_map<T, F>(
    data: &PanelDataset,
    replicates: usize,
    seed: u64,
    f: F,
) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(&PanelDataset) -> Result<T> + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|b| {
            let idx = resample_indices(data.len(), seed, b);
            let sample = data.resample(&idx)?;
            f(&sample)
        })
        .collect()
}

fn merge(mut a: NuisanceBundle, b: NuisanceBundle) -> NuisanceBundle {
    if b.propensity_scores.is_some() {
        a.propensity = b.propensity;
        a.propensity_scores = b.propensity_scores;
        a.weights = b.weights;
    }
    if b.mu_hat.is_some() {
        a.outcome_before = b.outcome_before;
        a.outcome_after = b.outcome_after;
        a.mu_hat = b.mu_hat;
        a.nu_hat = b.nu_hat;
    }
    a
}

fn ok_fit(r: &Option<Result<NuisanceBundle>>) -> Option<&NuisanceBundle> {
    r.as_ref().and_then(|b| b.as_ref().ok())
}

/// Separately fitted propensity and outcome models of one dataset; a failed
/// fit only fails the estimators that need it.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub propensity: Option<Result<NuisanceBundle>>,
    pub outcome: Option<Result<NuisanceBundle>>,
}

impl NuisanceFits {
    /// Fits the models `needs` asks for, warm-starting from `warm`.
    pub fn fit(
        data: &PanelDataset,
        specs: &NuisanceSpecs,
        needs: NuisanceNeeds,
        options: &FitOptions,
        warm: Option<&NuisanceFits>,
    ) -> Self {
        let propensity = needs.propensity.then(|| {
            fit_nuisance_from(
                data,
                specs,
                NuisanceNeeds {
                    propensity: true,
                    outcome: false,
                },
                options,
                warm.and_then(|w| ok_fit(&w.propensity)),
            )
        });
        let outcome = needs.outcome.then(|| {
            fit_nuisance_from(
                data,
                specs,
                NuisanceNeeds {
                    propensity: false,
                    outcome: true,
                },
                options,
                warm.and_then(|w| ok_fit(&w.outcome)),
            )
        });
        Self {
            propensity,
            outcome,
        }
    }

    /// Bundle with the models `estimator` needs.
    pub fn bundle_for(&self, data: &PanelDataset, estimator: Estimator) -> Result<NuisanceBundle> {
        let mut bundle = NuisanceBundle::from_values(data, None, None, None)?;
        if estimator.needs_propensity() {
            if let Some(p) = &self.propensity {
                bundle = merge(bundle, p.clone()?);
            }
        }
        if estimator.needs_outcome() {
            if let Some(o) = &self.outcome {
                bundle = merge(bundle, o.clone()?);
            }
        }
        Ok(bundle)
    }

    pub fn estimate(
        &self,
        data: &PanelDataset,
        estimators: &[Estimator],
    ) -> Vec<Result<EffectEstimate>> {
        estimators
            .iter()
            .map(|&est| estimate_effect(data, est, &self.bundle_for(data, est)?))
            .collect()
    }
}

/// Estimates every estimator on one dataset, fitting each nuisance model at
/// most once. A failed fit only fails the estimators that need it.
pub fn estimate_all(
    data: &PanelDataset,
    estimators: &[Estimator],
    specs: &NuisanceSpecs,
    options: &FitOptions,
) -> Vec<Result<EffectEstimate>> {
    let needs = NuisanceNeeds::for_estimators(estimators);
    NuisanceFits::fit(data, specs, needs, options, None).estimate(data, estimators)
}

/// Bootstrap intervals for a single estimator.
pub fn bootstrap_ci(
    data: &PanelDataset,
    estimator: Estimator,
    specs: &NuisanceSpecs,
    config: &BootstrapConfig,
    options: &FitOptions,
) -> Result<BootstrapResult> {
    let mut out = bootstrap_many(data, &[estimator], specs, config, options)?;
    Ok(out.remove(0))
}

/// Bootstrap intervals for several estimators from shared resamples. Each
/// result equals what [`bootstrap_ci`] returns for that estimator alone.
pub fn bootstrap_many(
    data: &PanelDataset,
    estimators: &[Estimator],
    specs: &NuisanceSpecs,
    config: &BootstrapConfig,
    options: &FitOptions,
) -> Result<Vec<BootstrapResult>> {
    config.validate()?;
    let needs = NuisanceNeeds::for_estimators(estimators);
    let full = NuisanceFits::fit(data, specs, needs, options, None);
    let points = full
        .estimate(data, estimators)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let k = estimators.len();
    let replicates: Vec<Vec<Option<ReplicateEstimate>>> =
        bootstrap_map(data, config.replicates, config.seed, |sample| {
            Ok(
                NuisanceFits::fit(sample, specs, needs, options, Some(&full))
                    .estimate(sample, estimators)
                    .into_iter()
                    .map(|r| {
                        r.ok().map(|e| ReplicateEstimate {
                            cfd: e.cfd,
                            cmf: e.cmf_defined.then_some(e.cmf),
                        })
                    })
                    .collect(),
            )
        })
        .into_iter()
        .map(|r| r.unwrap_or_else(|_| vec![None; k]))
        .collect();

    points
        .into_iter()
        .enumerate()
        .map(|(j, point)| {
            let column: Vec<Option<ReplicateEstimate>> =
                replicates.iter().map(|row| row[j]).collect();
            summarize(point, &column, config)
        })
        .collect()
}

/// Builds a [`BootstrapResult`] from per-replicate outcomes (`None` = failed).
pub fn summarize(
    mut point: EffectEstimate,
    replicates: &[Option<ReplicateEstimate>],
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let total = replicates.len();
    let ok: Vec<ReplicateEstimate> = replicates.iter().flatten().copied().collect();
    let n_failed = total - ok.len();
    if let FailurePolicy::AbortAtThreshold(limit) = config.failure_policy {
        if n_failed as f64 > limit * total as f64 {
            return Err(Error::TooManyFailures {
                failed: n_failed,
                total,
                limit: 100.0 * limit,
            });
        }
    }
    let cfd: Vec<f64> = ok.iter().map(|r| r.cfd).collect();
    let cmf: Vec<f64> = ok.iter().filter_map(|r| r.cmf).collect();
    let ci_cfd = percentile_interval(&cfd, config.alpha).ok_or(Error::TooManyFailures {
        failed: n_failed,
        total,
        limit: 100.0,
    })?;
    let ci_cmf = percentile_interval(&cmf, config.alpha);
    point.ci_cfd = Some(ci_cfd);
    point.ci_cmf = ci_cmf;
    Ok(BootstrapResult {
        point,
        ci_cfd,
        ci_cmf,
        n_cmf_undefined: ok.len() - cmf.len(),
        replicate_estimates: ok,
        n_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{FeatureSpec, OutcomeFamily};

    fn brute_quantile(values: &[f64], p: f64) -> f64 {
        // Type 7: 1 + (n − 1)p in 1-based order statistics.
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = 1.0 + (v.len() as f64 - 1.0) * p;
        let j = pos.floor() as usize;
        let g = pos - j as f64;
        if j >= v.len() {
            return v[v.len() - 1];
        }
        (1.0 - g) * v[j - 1] + g * v[j]
    }

    #[test]
    fn quantile_matches_order_statistic_oracle() {
        let mut rng = substream(11, &[]);
        for len in [1usize, 2, 3, 7, 50, 999, 1000] {
            let v: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 10.0 - 3.0).collect();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            for p in [0.0, 0.025, 0.1, 0.5, 0.9, 0.975, 1.0] {
                let a = quantile_type7(&sorted, p);
                let b = brute_quantile(&v, p);
                assert!((a - b).abs() < 1e-12, "len {len} p {p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn singleton_interval() {
        assert_eq!(percentile_interval(&[2.5], 0.05), Some((2.5, 2.5)));
        assert_eq!(percentile_interval(&[], 0.05), None);
    }

    #[test]
    fn config_validation() {
        assert!(BootstrapConfig::new(0, 0.05, 1).validate().is_err());
        assert!(BootstrapConfig::new(10, 1.0, 1).validate().is_err());
        assert!(BootstrapConfig::new(10, 0.1, 1).validate().is_ok());
    }

    fn identical_units() -> PanelDataset {
        let g = [true, true, false, false, false];
        PanelDataset::from_columns(&[2.0; 5], &[3.0; 5], &g, &[], OutcomeFamily::Count).unwrap()
    }

    #[test]
    fn identical_units_give_zero_width_intervals() {
        let data = identical_units();
        let specs = NuisanceSpecs {
            propensity: FeatureSpec::intercept_only(),
            outcome: FeatureSpec::intercept_only(),
        };
        let res = bootstrap_ci(
            &data,
            Estimator::Direct,
            &specs,
            &BootstrapConfig::new(50, 0.05, 3),
            &FitOptions::default(),
        )
        .unwrap();
        // Some resamples lose a group; the rest are all identical.
        assert!(res.n_failed < 50);
        assert_eq!(res.ci_cfd.0, res.ci_cfd.1);
        assert_eq!(res.ci_cmf, Some((1.0, 1.0)));
    }

    #[test]
    fn abort_threshold() {
        let data = identical_units();
        let specs = NuisanceSpecs {
            propensity: FeatureSpec::intercept_only(),
            outcome: FeatureSpec::intercept_only(),
        };
        let mut config = BootstrapConfig::new(200, 0.05, 3);
        config.failure_policy = FailurePolicy::AbortAtThreshold(0.0);
        let err = bootstrap_ci(
            &data,
            Estimator::Direct,
            &specs,
            &config,
            &FitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { .. }));
    }
}

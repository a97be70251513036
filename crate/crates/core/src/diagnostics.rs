//! Overlap and balance checks, the placebo parallel-trend evaluation and the
//! influence-function variance comparison of the weighting and double-robust
//! estimators.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_many, BootstrapConfig, BootstrapResult};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, NuisanceSpecs};
use crate::glm::{FitOptions, LogisticFit};
use crate::panel::{expand_features, DesignMatrix, PanelDataset, INTERCEPT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBalance {
    pub feature: String,
    pub unweighted_asd: f64,
    pub weighted_asd: f64,
    /// Constant within both groups; both ASDs are reported as 0.
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub per_feature: Vec<FeatureBalance>,
    pub max_unweighted: f64,
    pub max_weighted: f64,
}

impl BalanceReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "unweighted_asd", "weighted_asd", "zero_variance"])
            .map_err(csv_err)?;
        for f in &self.per_feature {
            w.write_record([
                f.feature.clone(),
                f.unweighted_asd.to_string(),
                f.weighted_asd.to_string(),
                f.zero_variance.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
    (mean, var, n)
}

fn weighted_mean<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (v, w) in pairs {
        num += v * w;
        den += w;
    }
    num / den
}

/// Absolute standardized differences per design column (the intercept is
/// skipped): |x̄₁ʷ − x̄₀ʷ| / √(s₁²/N₁ + s₀²/N₀) with unweighted group
/// variances in the denominator for both the unweighted and weighted rows.
pub fn compute_balance(
    data: &PanelDataset,
    design: &DesignMatrix,
    weights: &[f64],
) -> Result<BalanceReport> {
    let n = data.len();
    if design.nrows() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "balance needs {n} design rows and weights, got {} and {}",
            design.nrows(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "balance weight {w} is not positive"
        )));
    }
    let treated: Vec<bool> = data.units().iter().map(|u| u.treated).collect();
    let mut per_feature = Vec::new();
    for (j, name) in design.names().iter().enumerate() {
        if name == INTERCEPT {
            continue;
        }
        let col = design.column(j);
        let group = |g: bool| {
            col.iter()
                .zip(&treated)
                .filter(move |(_, t)| **t == g)
                .map(|(v, _)| *v)
        };
        let (m1, v1, n1) = mean_var(group(true));
        let (m0, v0, n0) = mean_var(group(false));
        let se = (v1 / n1 as f64 + v0 / n0 as f64).sqrt();
        let wgroup = |g: bool| {
            weighted_mean(
                col.iter()
                    .zip(weights)
                    .zip(&treated)
                    .filter(move |(_, t)| **t == g)
                    .map(|(p, _)| p),
            )
        };
        let (unweighted_asd, weighted_asd, zero_variance) = if se > 0.0 {
            (
                (m1 - m0).abs() / se,
                (wgroup(true) - wgroup(false)).abs() / se,
                false,
            )
        } else {
            (0.0, 0.0, true)
        };
        per_feature.push(FeatureBalance {
            feature: name.clone(),
            unweighted_asd,
            weighted_asd,
            zero_variance,
        });
    }
    let max = |f: fn(&FeatureBalance) -> f64| per_feature.iter().map(f).fold(0.0, f64::max);
    Ok(BalanceReport {
        max_unweighted: max(|f| f.unweighted_asd),
        max_weighted: max(|f| f.weighted_asd),
        per_feature,
    })
}

/// Default histogram resolution over [0, 1].
pub const DEFAULT_OVERLAP_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub histogram_treated: Vec<usize>,
    pub histogram_control: Vec<usize>,
    pub bin_edges: Vec<f64>,
    pub control_ps_max: f64,
    pub treated_beyond_control_max: usize,
}

impl OverlapReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_lower", "bin_upper", "treated", "control"])
            .map_err(csv_err)?;
        for b in 0..self.histogram_treated.len() {
            w.write_record([
                self.bin_edges[b].to_string(),
                self.bin_edges[b + 1].to_string(),
                self.histogram_treated[b].to_string(),
                self.histogram_control[b].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histograms of the fitted propensity by group. The fit must carry its
/// feature specification.
pub fn compute_overlap(
    data: &PanelDataset,
    propensity: &LogisticFit,
    bins: usize,
) -> Result<OverlapReport> {
    let spec = propensity
        .feature_spec
        .as_ref()
        .ok_or(Error::MissingNuisance("propensity feature specification"))?;
    let scores = propensity.predict(&expand_features(data, spec)?)?;
    overlap_from_scores(data, &scores, bins)
}

/// Equal-width histograms of `scores` by group; the last bin is closed.
pub fn overlap_from_scores(
    data: &PanelDataset,
    scores: &[f64],
    bins: usize,
) -> Result<OverlapReport> {
    if scores.len() != data.len() {
        return Err(Error::DimensionMismatch("propensity score length".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    let mut treated = vec![0; bins];
    let mut control = vec![0; bins];
    let mut control_max = f64::NEG_INFINITY;
    for (u, &e) in data.units().iter().zip(scores) {
        let b = ((e * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        if u.treated {
            treated[b] += 1;
        } else {
            control[b] += 1;
            control_max = control_max.max(e);
        }
    }
    Ok(OverlapReport {
        histogram_treated: treated,
        histogram_control: control,
        bin_edges: (0..=bins).map(|b| b as f64 / bins as f64).collect(),
        control_ps_max: control_max,
        treated_beyond_control_max: crate::estimators::extrapolated_treated(data, scores),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrendAdvisory {
    /// Every CFD interval covers 0 and every CMF interval covers 1.
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboReport {
    pub results: Vec<BootstrapResult>,
    pub advisory: TrendAdvisory,
}

/// Runs the estimators on two pre-treatment periods, where any "effect" is a
/// departure from parallel trends. Results follow the order of `estimators`.
pub fn placebo_evaluation(
    pre_data: &PanelDataset,
    estimators: &[Estimator],
    specs: &NuisanceSpecs,
    config: &BootstrapConfig,
    options: &FitOptions,
) -> Result<PlaceboReport> {
    let results = bootstrap_many(pre_data, estimators, specs, config, options)?;
    let pass = results.iter().all(|r| {
        let cfd = r.ci_cfd.0 <= 0.0 && 0.0 <= r.ci_cfd.1;
        let cmf = matches!(r.ci_cmf, Some((lo, hi)) if lo <= 1.0 && 1.0 <= hi);
        cfd && cmf
    });
    Ok(PlaceboReport {
        results,
        advisory: if pass {
            TrendAdvisory::Pass
        } else {
            TrendAdvisory::Warn
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceDiagnostics {
    pub var_wt: f64,
    pub var_dr: f64,
    pub var_difference: f64,
    /// (var_wt − var_dr) / N.
    pub scaled_difference: f64,
    /// Sample mean of (2r²ΔY·h − r²h²)/π² with r = (G − e)/(1 − e) and
    /// h = ν − μ: the population variance difference as two expectations.
    pub appendix_difference: f64,
    /// Standard error of `appendix_difference`.
    pub appendix_se: f64,
}

/// Influence functions of the weighting and double-robust CFD estimators
/// with known nuisances, π = N₁/N and target `tau`.
pub fn influence_variance_comparison(
    data: &PanelDataset,
    true_propensity: &[f64],
    true_mu: &[f64],
    true_nu: &[f64],
    tau: f64,
) -> Result<InfluenceDiagnostics> {
    let n = data.len();
    for (name, v) in [
        ("propensity", true_propensity),
        ("mu", true_mu),
        ("nu", true_nu),
    ] {
        if v.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name} has length {}, dataset has {n} units",
                v.len()
            )));
        }
    }
    let pi = data.n_treated() as f64 / n as f64;
    let mut phi_wt = Vec::with_capacity(n);
    let mut phi_dr = Vec::with_capacity(n);
    let mut appendix = Vec::with_capacity(n);
    for (i, u) in data.units().iter().enumerate() {
        let e = true_propensity[i];
        let g = if u.treated { 1.0 } else { 0.0 };
        let dy = u.y_after - u.y_before;
        let h = true_nu[i] - true_mu[i];
        let r = (g - e) / (1.0 - e);
        phi_wt.push(r * dy / pi - tau);
        phi_dr.push(r * (dy - h) / pi - tau);
        appendix.push((2.0 * r * r * dy * h - r * r * h * h) / (pi * pi));
    }
    let var = |v: &[f64]| mean_var(v.iter().copied()).1;
    let var_wt = var(&phi_wt);
    let var_dr = var(&phi_dr);
    let (appendix_difference, appendix_var, _) = mean_var(appendix.iter().copied());
    Ok(InfluenceDiagnostics {
        var_wt,
        var_dr,
        var_difference: var_wt - var_dr,
        scaled_difference: (var_wt - var_dr) / n as f64,
        appendix_difference,
        appendix_se: (appendix_var / n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::OutcomeFamily;

    fn toy() -> PanelDataset {
        let g = [true, true, false, false, false];
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        PanelDataset::from_columns(
            &[1.0, 2.0, 0.0, 1.0, 3.0],
            &[2.0, 2.0, 1.0, 0.0, 3.0],
            &g,
            &[("x", &x)],
            OutcomeFamily::Count,
        )
        .unwrap()
    }

    #[test]
    fn identical_covariates_have_zero_asd() {
        let d = toy();
        let design = DesignMatrix::from_rows(vec!["c".into()], &vec![vec![2.0]; 5]).unwrap();
        let r = compute_balance(&d, &design, &[1.0; 5]).unwrap();
        assert_eq!(r.per_feature[0].unweighted_asd, 0.0);
        assert!(r.per_feature[0].zero_variance);
    }

    #[test]
    fn treatment_indicator_is_flagged() {
        let d = toy();
        let rows: Vec<Vec<f64>> = d.treatment_labels().into_iter().map(|g| vec![g]).collect();
        let design = DesignMatrix::from_rows(vec!["g".into()], &rows).unwrap();
        let r = compute_balance(&d, &design, &[1.0; 5]).unwrap();
        assert!(r.per_feature[0].zero_variance);
    }

    #[test]
    fn hand_computed_asd() {
        let d = toy();
        let rows: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|v| vec![*v]).collect();
        let design = DesignMatrix::from_rows(vec!["x".into()], &rows).unwrap();
        let w = [1.0, 1.0, 2.0, 1.0, 1.0];
        let r = compute_balance(&d, &design, &w).unwrap();
        // treated {1,2}: mean 1.5, var 0.5; control {3,4,5}: mean 4, var 1
        let se = (0.5f64 / 2.0 + 1.0 / 3.0).sqrt();
        assert!((r.per_feature[0].unweighted_asd - 2.5 / se).abs() < 1e-14);
        // weighted control mean (6 + 4 + 5)/4 = 3.75
        assert!((r.per_feature[0].weighted_asd - 2.25 / se).abs() < 1e-14);
        assert_eq!(r.max_weighted, r.per_feature[0].weighted_asd);
    }

    #[test]
    fn overlap_counts_and_extrapolation() {
        let d = toy();
        let r = overlap_from_scores(&d, &[0.9, 1.0, 0.1, 0.2, 0.3], 10).unwrap();
        assert_eq!(r.histogram_treated.iter().sum::<usize>(), 2);
        assert_eq!(r.histogram_control.iter().sum::<usize>(), 3);
        assert_eq!(r.histogram_treated[9], 2);
        assert_eq!(r.treated_beyond_control_max, 2);
        assert_eq!(r.bin_edges.len(), 11);
        let flat = overlap_from_scores(&d, &[0.4; 5], 30).unwrap();
        assert_eq!(flat.histogram_treated.iter().filter(|c| **c > 0).count(), 1);
        assert_eq!(flat.histogram_control.iter().filter(|c| **c > 0).count(), 1);
        assert_eq!(flat.treated_beyond_control_max, 0);
    }

    #[test]
    fn equal_regressions_give_equal_influence() {
        let d = toy();
        let e = [0.3, 0.4, 0.2, 0.5, 0.6];
        let m = [1.0, 2.0, 1.5, 0.5, 2.5];
        let r = influence_variance_comparison(&d, &e, &m, &m, 0.1).unwrap();
        assert_eq!(r.var_wt, r.var_dr);
        assert_eq!(r.var_difference, 0.0);
        assert_eq!(r.appendix_difference, 0.0);
    }

    #[test]
    fn influence_rejects_short_inputs() {
        let d = toy();
        assert!(matches!(
            influence_variance_comparison(&d, &[0.5; 4], &[1.0; 5], &[1.0; 5], 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }
}

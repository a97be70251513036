use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::time::Duration;

use drdid::bootstrap::BootstrapResult;
use drdid::glm::PowerOrderSelection;
use drdid::sim::{MetricRow, TrueEffects};
use drdid::{
    BalanceReport, EffectEstimate, Error, EstimationWarning, LogisticFit, NegBinFit, OverlapReport,
    Result, TrendAdvisory,
};
use serde::Serialize;

/// Bumped on any breaking change to the report layout.
pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: "drdid",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandName {
    Analyze,
    Placebo,
    Simulate,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: &'static str,
    pub tool: ToolInfo,
    pub command: CommandName,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<ModelSummary>,
    pub estimates: Vec<EstimateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<BalanceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placebo: Option<PlaceboSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSummary>,
    pub warnings: Vec<String>,
    pub warning_counts: WarningCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunReport {
    pub fn new(command: CommandName, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: ToolInfo::current(),
            command,
            config,
            data: None,
            models: None,
            estimates: Vec::new(),
            balance: None,
            overlap: None,
            placebo: None,
            simulation: None,
            warnings: Vec::new(),
            warning_counts: WarningCounts::default(),
            timing: None,
        }
    }

    pub fn tally_warnings(&mut self) {
        let mut counts = WarningCounts::default();
        for e in &self.estimates {
            for w in &e.warnings {
                match w {
                    EstimationWarning::ExtremeWeights { .. } => counts.extreme_weights += 1,
                    EstimationWarning::NegativeTheta0 { .. } => counts.negative_theta0 += 1,
                    EstimationWarning::NonConvergence { .. } => counts.non_convergence += 1,
                    EstimationWarning::PoissonFallback { .. } => counts.poisson_fallback += 1,
                    EstimationWarning::Extrapolation { .. } => counts.extrapolation += 1,
                }
            }
        }
        self.warning_counts = counts;
    }
}

#[derive(Debug, Default, Serialize)]
pub struct WarningCounts {
    pub extreme_weights: usize,
    pub negative_theta0: usize,
    pub non_convergence: usize,
    pub poisson_fallback: usize,
    pub extrapolation: usize,
}

#[derive(Debug, Serialize)]
pub struct DataSummary {
    pub n_units: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub dropped_rows: usize,
}

#[derive(Debug, Serialize)]
pub struct LogisticSummary {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub separation_detected: bool,
}

impl From<&LogisticFit> for LogisticSummary {
    fn from(f: &LogisticFit) -> Self {
        Self {
            names: f.names.clone(),
            coefficients: f.coefficients.clone(),
            converged: f.converged,
            iterations: f.iterations,
            log_likelihood: f.log_likelihood,
            separation_detected: f.separation_detected,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CountSummary {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// `null` for a Poisson fit.
    pub dispersion: Option<f64>,
    pub family: drdid::CountFamily,
    pub poisson_fallback: bool,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl From<&NegBinFit> for CountSummary {
    fn from(f: &NegBinFit) -> Self {
        Self {
            names: f.names.clone(),
            coefficients: f.coefficients.clone(),
            dispersion: f.dispersion.is_finite().then_some(f.dispersion),
            family: f.family,
            poisson_fallback: f.poisson_fallback,
            converged: f.converged,
            iterations: f.iterations,
            log_likelihood: f.log_likelihood,
        }
    }
}

#[derive(Debug, Default, Serialize)]
pub struct ModelSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub propensity: Option<LogisticSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ps_order_selection: Option<PowerOrderSelection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome_before: Option<CountSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome_after: Option<CountSummary>,
}

#[derive(Debug, Serialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub failed: usize,
    pub cmf_undefined: usize,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub estimator: drdid::Estimator,
    pub theta1: f64,
    pub theta0: f64,
    pub cfd: f64,
    /// `null` when θ̂₀ ≤ 0.
    pub cmf: Option<f64>,
    pub log_cmf: Option<f64>,
    pub ci_cfd: Option<[f64; 2]>,
    pub ci_cmf: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
    pub warnings: Vec<EstimationWarning>,
}

impl EstimateReport {
    pub fn point(e: &EffectEstimate) -> Self {
        Self {
            estimator: e.estimator,
            theta1: e.theta1,
            theta0: e.theta0,
            cfd: e.cfd,
            cmf: e.cmf_defined.then_some(e.cmf),
            log_cmf: e.log_cmf(),
            ci_cfd: e.ci_cfd.map(|(a, b)| [a, b]),
            ci_cmf: e.ci_cmf.map(|(a, b)| [a, b]),
            bootstrap: None,
            warnings: e.warnings.clone(),
        }
    }

    pub fn with_bootstrap(r: &BootstrapResult, replicates: usize) -> Self {
        let mut out = Self::point(&r.point);
        out.bootstrap = Some(BootstrapSummary {
            replicates,
            failed: r.n_failed,
            cmf_undefined: r.n_cmf_undefined,
        });
        out
    }
}

#[derive(Debug, Serialize)]
pub struct PlaceboSummary {
    pub advisory: TrendAdvisory,
}

#[derive(Debug, Serialize)]
pub struct TruthCheck {
    pub draws: usize,
    pub monte_carlo: TrueEffects,
    pub configured_cfd: f64,
    pub configured_cmf: f64,
    pub agrees: bool,
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub truth: TruthCheck,
    pub rows: Vec<MetricRow>,
    pub dropped_replicates: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
}

impl Timing {
    pub fn from(d: Duration) -> Self {
        Self {
            total_seconds: d.as_secs_f64(),
        }
    }
}

pub fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

pub fn write_json(report: &RunReport, path: Option<&Path>) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat projection: one row per estimator.
pub fn write_estimates_csv(report: &RunReport, path: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(open_output(path)?);
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "estimator",
        "theta1",
        "theta0",
        "cfd",
        "cmf",
        "log_cmf",
        "ci_cfd_lower",
        "ci_cfd_upper",
        "ci_cmf_lower",
        "ci_cmf_upper",
        "bootstrap_failed",
        "warnings",
    ])
    .map_err(err)?;
    for e in &report.estimates {
        w.write_record([
            e.estimator.as_str().to_string(),
            e.theta1.to_string(),
            e.theta0.to_string(),
            e.cfd.to_string(),
            opt(e.cmf),
            opt(e.log_cmf),
            opt(e.ci_cfd.map(|c| c[0])),
            opt(e.ci_cfd.map(|c| c[1])),
            opt(e.ci_cmf.map(|c| c[0])),
            opt(e.ci_cmf.map(|c| c[1])),
            e.bootstrap
                .as_ref()
                .map(|b| b.failed.to_string())
                .unwrap_or_default(),
            e.warnings.len().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Flat projection: one row per scenario.
pub fn write_metrics_csv(rows: &[MetricRow], path: Option<&Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(open_output(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

use std::fs::File;
use std::time::Instant;

use drdid::bootstrap::{bootstrap_many, estimate_all};
use drdid::diagnostics::{compute_balance, overlap_from_scores, placebo_evaluation};
use drdid::estimators::{fit_nuisance, NuisanceNeeds};
use drdid::glm::{select_power_order, CvScheme};
use drdid::panel::{load_csv, LoadedPanel};
use drdid::{
    expand_features, BootstrapConfig, CsvSchema, Error, FeatureSpec, FitOptions, MissingPolicy,
    NuisanceSpecs, OutcomeFamily, PanelDataset, Result,
};
use serde::Serialize;

use crate::report::{
    write_estimates_csv, write_json, CommandName, DataSummary, EstimateReport, LogisticSummary,
    ModelSummary, PlaceboSummary, RunReport, Timing,
};
use crate::{DataArgs, Format, PsPower};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Analyze,
    Placebo,
}

/// Order used for the balance table when it exceeds the propensity order.
const BALANCE_ORDER: u32 = 3;

#[derive(Debug, Serialize)]
struct ConfigEcho<'a> {
    data: String,
    id: Option<&'a str>,
    treatment: &'a str,
    before: &'a str,
    after: &'a str,
    covariates: &'a [String],
    binary_covariates: Vec<String>,
    log_cols: &'a [String],
    ps_power: PsPower,
    ps_order: Option<u32>,
    standardize: bool,
    estimators: Vec<&'static str>,
    bootstrap: usize,
    alpha: f64,
    seed: u64,
    missing: MissingPolicy,
    bins: usize,
}

fn validate(args: &DataArgs) -> Result<()> {
    if args.estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    let mut seen = Vec::new();
    for e in &args.estimators {
        if seen.contains(e) {
            return Err(Error::InvalidArgument(format!(
                "estimator `{e}` listed twice"
            )));
        }
        seen.push(*e);
    }
    if let Some(c) = args.log_cols.iter().find(|c| !args.covariates.contains(c)) {
        return Err(Error::InvalidArgument(format!(
            "log column `{c}` is not among --covariates"
        )));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {}",
            args.alpha
        )));
    }
    if args.bins == 0 {
        return Err(Error::InvalidArgument("--bins must be positive".into()));
    }
    Ok(())
}

fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|v| *v == 0.0 || *v == 1.0)
}

/// Base specification: 0/1 covariates linear, log columns on the log scale,
/// the rest as order-1 power series.
fn base_spec(data: &PanelDataset, args: &DataArgs) -> Result<(FeatureSpec, Vec<String>)> {
    let mut binary = Vec::new();
    let mut spec = FeatureSpec::intercept_only();
    spec.standardize = args.standardize;
    for name in &args.covariates {
        if args.log_cols.contains(name) {
            spec = spec.with_log(name);
        } else if is_binary(&data.covariate(name)?) {
            spec.base_columns.push(name.clone());
            binary.push(name.clone());
        } else {
            spec = spec.with_power(name, 1);
        }
    }
    spec.validate()?;
    Ok((spec, binary))
}

pub fn run(args: &DataArgs, mode: Mode) -> Result<()> {
    let started = Instant::now();
    validate(args)?;
    let schema = CsvSchema {
        id: args.id.clone(),
        treatment: args.treatment.clone(),
        before: args.before.clone(),
        after: args.after.clone(),
        covariates: args.covariates.clone(),
    };
    let missing = if args.lenient_missing {
        MissingPolicy::Lenient
    } else {
        MissingPolicy::Strict
    };
    let LoadedPanel {
        dataset: data,
        dropped_rows,
    } = load_csv(&args.data, &schema, OutcomeFamily::Count, missing)?;
    let options = FitOptions::default();
    let (base, binary) = base_spec(&data, args)?;
    let needs = NuisanceNeeds::for_estimators(&args.estimators);
    let has_power = !base.power_orders.is_empty();

    let mut models = ModelSummary::default();
    let ps_order = match (args.ps_power, has_power) {
        (_, false) => None,
        (PsPower::Order(l), true) => Some(l),
        (PsPower::Auto, true) => {
            let sel = select_power_order(
                &data,
                &base,
                &[1, 2, 3, 4, 5],
                CvScheme::default_for(data.len()),
                &options,
            )?;
            let order = sel.order;
            models.ps_order_selection = Some(sel);
            Some(order)
        }
    };
    let ps_spec = base.with_shared_order(ps_order.unwrap_or(1));
    let specs = NuisanceSpecs {
        propensity: ps_spec.clone(),
        outcome: base.clone(),
    };

    let mut report = RunReport::new(
        match mode {
            Mode::Analyze => CommandName::Analyze,
            Mode::Placebo => CommandName::Placebo,
        },
        serde_json::to_value(ConfigEcho {
            data: args.data.display().to_string(),
            id: args.id.as_deref(),
            treatment: &args.treatment,
            before: &args.before,
            after: &args.after,
            covariates: &args.covariates,
            binary_covariates: binary,
            log_cols: &args.log_cols,
            ps_power: args.ps_power,
            ps_order,
            standardize: args.standardize,
            estimators: args.estimators.iter().map(|e| e.as_str()).collect(),
            bootstrap: args.bootstrap,
            alpha: args.alpha,
            seed: args.seed,
            missing,
            bins: args.bins,
        })
        .map_err(|e| Error::Io(e.to_string()))?,
    );
    report.data = Some(DataSummary {
        n_units: data.len(),
        n_treated: data.n_treated(),
        n_control: data.n_control(),
        dropped_rows,
    });
    if dropped_rows > 0 {
        report.warnings.push(format!(
            "{dropped_rows} rows with missing values were dropped"
        ));
    }

    // Full-sample fits for the model summary and diagnostics. The propensity
    // model is always fitted; its failure only matters to estimators that
    // use it.
    let propensity = fit_nuisance(
        &data,
        &specs,
        NuisanceNeeds {
            propensity: true,
            outcome: false,
        },
        &options,
    );
    match &propensity {
        Ok(p) => {
            let fit = p.propensity.as_ref().expect("propensity fitted");
            models.propensity = Some(LogisticSummary::from(fit));
            let scores = p.propensity_scores.as_ref().expect("scores present");
            let balance_spec = ps_spec.with_shared_order(ps_order.unwrap_or(1).max(BALANCE_ORDER));
            let balance_design = expand_features(&data, &balance_spec)?;
            report.balance = Some(compute_balance(&data, &balance_design, &p.weights)?);
            report.overlap = Some(overlap_from_scores(&data, scores, args.bins)?);
            if let Some(path) = &args.dump_weights {
                dump_weights(&data, scores, &p.weights, path)?;
            }
        }
        Err(e) if needs.propensity => return Err(e.clone()),
        Err(e) => report
            .warnings
            .push(format!("propensity model for diagnostics failed: {e}")),
    }
    if needs.outcome {
        let outcome = fit_nuisance(
            &data,
            &specs,
            NuisanceNeeds {
                propensity: false,
                outcome: true,
            },
            &options,
        )?;
        models.outcome_before = outcome.outcome_before.as_ref().map(Into::into);
        models.outcome_after = outcome.outcome_after.as_ref().map(Into::into);
    }
    report.models = Some(models);

    if args.bootstrap == 0 {
        for r in estimate_all(&data, &args.estimators, &specs, &options) {
            report.estimates.push(EstimateReport::point(&r?));
        }
        if mode == Mode::Placebo {
            report.warnings.push(
                "no bootstrap intervals; the parallel-trend advisory needs --bootstrap > 0".into(),
            );
        }
    } else {
        let config = BootstrapConfig::new(args.bootstrap, args.alpha, args.seed);
        let results = match mode {
            Mode::Analyze => bootstrap_many(&data, &args.estimators, &specs, &config, &options)?,
            Mode::Placebo => {
                let placebo =
                    placebo_evaluation(&data, &args.estimators, &specs, &config, &options)?;
                report.placebo = Some(PlaceboSummary {
                    advisory: placebo.advisory,
                });
                placebo.results
            }
        };
        for r in &results {
            report
                .estimates
                .push(EstimateReport::with_bootstrap(r, args.bootstrap));
        }
        if let Some(path) = &args.dump_bootstrap {
            dump_bootstrap(&results, path)?;
        }
    }
    report.tally_warnings();
    if args.timing {
        report.timing = Some(Timing::from(started.elapsed()));
    }
    if let Some(path) = &args.balance_csv {
        if let Some(b) = &report.balance {
            b.write_csv(create(path)?)?;
        }
    }
    if let Some(path) = &args.overlap_csv {
        if let Some(o) = &report.overlap {
            o.write_csv(create(path)?)?;
        }
    }
    match args.format {
        Format::Json => write_json(&report, args.out.as_deref()),
        Format::Csv => write_estimates_csv(&report, args.out.as_deref()),
    }
}

fn create(path: &std::path::Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn dump_bootstrap(results: &[drdid::BootstrapResult], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["estimator", "index", "cfd", "cmf"])
        .map_err(err)?;
    for r in results {
        for (b, rep) in r.replicate_estimates.iter().enumerate() {
            w.write_record([
                r.point.estimator.as_str().to_string(),
                b.to_string(),
                rep.cfd.to_string(),
                rep.cmf.map(|c| c.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn dump_weights(
    data: &PanelDataset,
    scores: &[f64],
    weights: &[f64],
    path: &std::path::Path,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["id", "treated", "propensity", "weight"])
        .map_err(err)?;
    for ((u, e), wt) in data.units().iter().zip(scores).zip(weights) {
        w.write_record([
            u.id.clone(),
            (u.treated as u8).to_string(),
            e.to_string(),
            wt.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

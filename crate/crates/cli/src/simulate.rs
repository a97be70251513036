use std::fs::File;
use std::time::Instant;

use drdid::rng::derive_seed;
use drdid::sim::{
    run_study_detailed, scenario_from_label, true_effects, DgpParams, SimulationScenario,
    TreatedAfter, SCENARIO_LABELS,
};
use drdid::{BootstrapConfig, Error, FitOptions, Result};
use serde::{Deserialize, Serialize};

use crate::report::{
    write_json, write_metrics_csv, CommandName, RunReport, SimulationSummary, Timing, TruthCheck,
};
use crate::{Format, SimulateArgs};

/// Settings file for `drdid simulate`. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    replicates: Option<usize>,
    bootstrap: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    n: Option<usize>,
    scenarios: Option<Vec<String>>,
    placebo: Option<bool>,
    dgp: Option<DgpParams>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    replicates: usize,
    bootstrap: usize,
    alpha: f64,
    seed: u64,
    n: usize,
    scenarios: Vec<String>,
    placebo: bool,
    truth_draws: usize,
    dgp: DgpParams,
}

const TRUTH_STREAM: u64 = 0x7277;
/// Tolerances of the truth self-check.
const CFD_TOL: f64 = 0.003;
const CMF_TOL: f64 = 0.01;

fn resolve(args: &SimulateArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
            toml::from_str::<SimulateFile>(&text)
                .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?
        }
        None => SimulateFile::default(),
    };
    let placebo = args.placebo || file.placebo.unwrap_or(false);
    let mut dgp = file.dgp.unwrap_or_default();
    if placebo {
        dgp.treated_after = TreatedAfter::NoEffect;
        dgp.true_cfd = 0.0;
        dgp.true_log_cmf = 0.0;
    }
    let scenarios = match args.scenarios.clone().or(file.scenarios) {
        None => SCENARIO_LABELS.iter().map(|s| s.to_string()).collect(),
        Some(list) if list.len() == 1 && list[0].eq_ignore_ascii_case("all") => {
            SCENARIO_LABELS.iter().map(|s| s.to_string()).collect()
        }
        Some(list) => list,
    };
    let resolved = Resolved {
        replicates: args.replicates.or(file.replicates).unwrap_or(500),
        bootstrap: args.bootstrap.or(file.bootstrap).unwrap_or(500),
        alpha: args.alpha.or(file.alpha).unwrap_or(0.05),
        seed: args.seed.or(file.seed).unwrap_or(0),
        n: args.n.or(file.n).unwrap_or(2000),
        scenarios,
        placebo,
        truth_draws: args.truth_draws,
        dgp,
    };
    if resolved.replicates == 0 || resolved.bootstrap == 0 || resolved.n == 0 {
        return Err(Error::InvalidArgument(
            "replicates, bootstrap and n must be positive".into(),
        ));
    }
    if resolved.truth_draws == 0 {
        return Err(Error::InvalidArgument(
            "--truth-draws must be positive".into(),
        ));
    }
    resolved.dgp.validate()?;
    Ok(resolved)
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = resolve(args)?;
    let boot = BootstrapConfig::new(cfg.bootstrap, cfg.alpha, 0);
    boot.validate()?;
    let scenarios = cfg
        .scenarios
        .iter()
        .map(|label| {
            let (est, ps, out) = scenario_from_label(label)?;
            Ok(SimulationScenario::new(
                est,
                ps,
                out,
                cfg.n,
                cfg.replicates,
                boot.clone(),
                cfg.seed,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let truth = true_effects(
        &cfg.dgp,
        cfg.truth_draws,
        derive_seed(cfg.seed, &[TRUTH_STREAM]),
    )?;
    let configured_cmf = cfg.dgp.true_log_cmf.exp();
    let agrees = (truth.cfd - cfg.dgp.true_cfd).abs() <= CFD_TOL
        && (truth.cmf - configured_cmf).abs() <= CMF_TOL;

    let outcomes = run_study_detailed(&scenarios, &cfg.dgp, &FitOptions::default())?;
    let mut report = RunReport::new(
        CommandName::Simulate,
        serde_json::to_value(&cfg).map_err(|e| Error::Io(e.to_string()))?,
    );
    if !agrees {
        report.warnings.push(format!(
            "configured truth (CFD {}, CMF {}) differs from its Monte Carlo value (CFD {:.5}, CMF {:.5})",
            cfg.dgp.true_cfd, configured_cmf, truth.cfd, truth.cmf
        ));
    }
    for o in &outcomes {
        if o.n_dropped > 0 {
            report.warnings.push(format!(
                "{}: {} replicates dropped",
                o.row.scenario, o.n_dropped
            ));
        }
    }
    let rows: Vec<_> = outcomes.iter().map(|o| o.row.clone()).collect();
    report.simulation = Some(SimulationSummary {
        truth: TruthCheck {
            draws: cfg.truth_draws,
            monte_carlo: truth,
            configured_cfd: cfg.dgp.true_cfd,
            configured_cmf,
            agrees,
        },
        rows: rows.clone(),
        dropped_replicates: outcomes.iter().map(|o| o.n_dropped).collect(),
    });
    if args.timing {
        report.timing = Some(Timing::from(started.elapsed()));
    }
    if let Some(path) = &args.dump_replicates {
        let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(file);
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "scenario",
            "replicate",
            "cfd",
            "log_cmf",
            "ci_cfd_lower",
            "ci_cfd_upper",
            "ci_cmf_lower",
            "ci_cmf_upper",
            "bootstrap_failed",
        ])
        .map_err(err)?;
        for rec in outcomes.iter().flat_map(|o| &o.records) {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                rec.scenario.clone(),
                rec.replicate.to_string(),
                rec.cfd.to_string(),
                opt(rec.log_cmf),
                rec.ci_cfd.0.to_string(),
                rec.ci_cfd.1.to_string(),
                opt(rec.ci_cmf.map(|c| c.0)),
                opt(rec.ci_cmf.map(|c| c.1)),
                rec.n_boot_failed.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
    }
    match args.format {
        Format::Json => write_json(&report, args.out.as_deref()),
        Format::Csv => write_metrics_csv(&rows, args.out.as_deref()),
    }
}

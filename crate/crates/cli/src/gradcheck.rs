use std::path::Path;

use bottomup::gradsuite::{self, SuiteConfig, SuiteReport};
use serde::Serialize;

use crate::args::GradcheckArgs;
use crate::{parse_sizes, write_artifact, CliError, CliResult};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const REPORT_FILE: &str = "gradcheck.json";

#[derive(Serialize)]
struct Output<'a> {
    tol: f64,
    passed: bool,
    #[serde(flatten)]
    report: &'a SuiteReport,
}

pub fn resolve(a: GradcheckArgs) -> CliResult<(SuiteConfig, f64)> {
    let defaults = SuiteConfig::default();
    let tol = a.tol.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
    }
    let sizes = match &a.sizes {
        Some(s) => parse_sizes(s)?,
        None => defaults.sizes,
    };
    let trials = a.trials.unwrap_or(defaults.trials);
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let step = a.step.unwrap_or(defaults.step);
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Usage(format!("--step must be positive, got {step}")));
    }
    Ok((SuiteConfig { sizes, trials, seed: a.seed.unwrap_or(defaults.seed), step }, tol))
}

pub fn run(a: GradcheckArgs, out: &Path) -> CliResult<()> {
    let (config, tol) = resolve(a)?;
    let report = gradsuite::run_suite(&config)?;
    let passed = report.passes(tol);
    let json = serde_json::to_string_pretty(&Output { tol, passed, report: &report })
        .map_err(|e| CliError::Failure(e.to_string()))?;
    let path = write_artifact(out, REPORT_FILE, &(json + "\n"))?;
    for r in &report.results {
        let flag = if r.max_rel_error < tol { "ok" } else { "FAIL" };
        println!("{:<28} {:<8} {:>10.3e}  {flag}", r.op, r.size.to_string(), r.max_rel_error);
    }
    println!(
        "{} checks, max relative error {:.3e}, tol {tol:e}, {:.1}s -> {}",
        report.results.len(),
        report.max_rel_error,
        report.elapsed_s,
        path.display()
    );
    if passed {
        Ok(())
    } else {
        let n = report.failures(tol).count();
        Err(CliError::Failure(format!("{n} gradient checks exceed tol {tol:e}")))
    }
}

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use ridgegrok_core::grokking::{
    AGGREGATE_HEADER, GrokReport, RunOutcome, aggregate_row, bounds_report, run_cell, run_seed, run_sweep,
    summarize, summary_csv,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// A file to be written, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: PathBuf,
    pub contents: String,
}

/// Everything a command produces, computed before anything touches the disk.
#[derive(Debug, Default)]
pub struct Plan {
    pub artifacts: Vec<Artifact>,
    /// One line per diverged run.
    pub divergences: Vec<String>,
}

impl Plan {
    fn push(&mut self, path: impl Into<PathBuf>, contents: String) {
        self.artifacts.push(Artifact {
            path: path.into(),
            contents,
        });
    }

    fn add_run(&mut self, dir: &Path, outcome: &RunOutcome) {
        let r = &outcome.report;
        self.push(
            dir.join(format!("trajectory_{}.csv", r.seed)),
            outcome.trajectory.to_csv_string(),
        );
        let mut json = r.to_json();
        json.push('\n');
        self.push(dir.join(format!("report_{}.json", r.seed)), json);
        if let Some(d) = &r.divergence {
            self.divergences.push(format!(
                "seed {} diverged at step {} ({})",
                r.seed, d.step, d.quantity
            ));
        }
    }

    /// Creates `out` and writes every artifact in order.
    pub fn write(&self, out: &Path) -> Result<(), CliError> {
        for a in &self.artifacts {
            let path = out.join(&a.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
            }
            std::fs::write(&path, &a.contents)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }

    /// The divergence error to report after writing, if any run diverged.
    pub fn divergence_error(&self) -> Option<CliError> {
        (!self.divergences.is_empty()).then(|| CliError::Divergence(self.divergences.join("; ")))
    }
}

fn aggregate_csv(rows: &[(Option<f64>, usize, &GrokReport)]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for (value, run, report) in rows {
        out.push_str(&aggregate_row(*value, *run, report));
        out.push('\n');
    }
    out
}

/// `runs` seeded runs of the base experiment.
pub fn plan_run(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    if cfg.sweep_spec().is_some() {
        return Err(CliError::Config(
            "config has a sweep grid; use the `sweep` command".into(),
        ));
    }
    cfg.experiment.validate()?;
    let outcomes: Vec<_> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| run_cell(&cfg.experiment, run_seed(cfg.seed, 0, i)))
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut plan = Plan::default();
    for o in &outcomes {
        plan.add_run(Path::new(""), o);
    }
    let reports: Vec<&GrokReport> = outcomes.iter().map(|o| &o.report).collect();
    let rows: Vec<_> = reports.iter().enumerate().map(|(i, r)| (None, i, *r)).collect();
    plan.push("aggregate.csv", aggregate_csv(&rows));
    plan.push("summary.csv", summary_csv(&[summarize(None, &reports)]));
    Ok(plan)
}

/// One cell per grid value; a config without a grid behaves as `run`.
pub fn plan_sweep(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    let Some(spec) = cfg.sweep_spec() else {
        return plan_run(cfg);
    };
    let result = run_sweep(&spec, true)?;
    let mut plan = Plan::default();
    for r in &result.runs {
        plan.add_run(&PathBuf::from(format!("cell_{}", r.cell)), &r.outcome);
    }
    plan.push("aggregate.csv", result.aggregate_csv());
    plan.push("summary.csv", result.summary_csv());
    Ok(plan)
}

/// Bounds for the instance of the first run, as JSON.
pub fn plan_bounds(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    let seed = run_seed(cfg.seed, 0, 0);
    let report = bounds_report(&cfg.experiment, seed)?;
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push('\n');
    let mut plan = Plan::default();
    plan.push(format!("bounds_{seed}.json"), json);
    Ok(plan)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::Detection;
use super::experiment::{ExperimentSpec, GrokReport, RunOutcome, run_cell};
use crate::error::{Result, contract};
use crate::numkit::derive_seed;

pub const AGGREGATE_HEADER: &str = "param_value,run,seed,t1,t2,gap,t1_bound,t2_bound,censored_t1,censored_t2";
pub const SUMMARY_HEADER: &str = "param_value,runs,t1_median,t1_p10,t1_p90,t2_median,t2_p10,t2_p90,\
gap_median,gap_p10,gap_p90,censored_t1,censored_t2,never_above_t1,diverged";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "lambda")]
    WeightDecay,
    #[serde(rename = "n")]
    SampleSize,
    #[serde(rename = "m")]
    Width,
    #[serde(rename = "nu2")]
    InitVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentSpec,
    pub param: SweepParam,
    /// Sorted ascending, no repeats.
    pub values: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
}

/// Seed of run `run` in cell `cell`; independent of execution order.
pub fn run_seed(base_seed: u64, cell: usize, run: usize) -> u64 {
    derive_seed(base_seed, &[cell as u64, run as u64])
}

fn as_count(value: f64, name: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
        Ok(value as usize)
    } else {
        contract(format!("{name} values must be positive integers, got {value}"))
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return contract("sweep grid is empty");
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return contract("sweep grid must be sorted ascending without repeats");
        }
        if self.runs == 0 {
            return contract("runs per cell must be at least 1");
        }
        for i in 0..self.values.len() {
            self.cell_spec(i)?.validate()?;
        }
        Ok(())
    }

    pub fn cell_spec(&self, cell: usize) -> Result<ExperimentSpec> {
        let value = *self
            .values
            .get(cell)
            .ok_or_else(|| crate::Error::Contract(format!("no sweep cell {cell}")))?;
        let mut spec = self.base.clone();
        match self.param {
            SweepParam::WeightDecay => spec.weight_decay = value,
            SweepParam::InitVariance => spec.init_variance = value,
            SweepParam::SampleSize => spec.n = as_count(value, "n")?,
            SweepParam::Width => spec.m = as_count(value, "m")?,
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub cell: usize,
    pub run: usize,
    pub param_value: f64,
    pub outcome: RunOutcome,
}

/// Median and 10th/90th percentiles; censored times enter as +∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    #[serde(serialize_with = "crate::bounds::serialize_f64")]
    pub median: f64,
    #[serde(serialize_with = "crate::bounds::serialize_f64")]
    pub p10: f64,
    #[serde(serialize_with = "crate::bounds::serialize_f64")]
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    /// Absent for a plain batch of runs.
    pub param_value: Option<f64>,
    pub runs: usize,
    pub t1: Option<Spread>,
    pub t2: Option<Spread>,
    pub gap: Option<Spread>,
    pub censored_t1: usize,
    pub censored_t2: usize,
    pub never_above_t1: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Ordered by (cell, run).
    pub runs: Vec<CellRun>,
    pub summary: Vec<CellSummary>,
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`); handles infinite entries.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || frac == 0.0 || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    if sorted[hi].is_infinite() {
        return sorted[hi];
    }
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn spread(mut values: Vec<f64>) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(Spread {
        median: quantile(&values, 0.5),
        p10: quantile(&values, 0.1),
        p90: quantile(&values, 0.9),
    })
}

/// Time as a number for aggregation: censored is +∞, undefined is skipped.
fn time_value(d: &Detection) -> Option<f64> {
    match d {
        Detection::Resolved { step } => Some(*step as f64),
        Detection::Censored { .. } => Some(f64::INFINITY),
        Detection::NeverAbove | Detection::Unavailable => None,
    }
}

pub fn summarize(param_value: Option<f64>, reports: &[&GrokReport]) -> CellSummary {
    let count = |f: &dyn Fn(&GrokReport) -> bool| reports.iter().filter(|r| f(r)).count();
    CellSummary {
        param_value,
        runs: reports.len(),
        t1: spread(reports.iter().filter_map(|r| time_value(&r.t1)).collect()),
        t2: spread(reports.iter().filter_map(|r| time_value(&r.t2)).collect()),
        gap: spread(reports.iter().filter_map(|r| r.gap.map(|g| g as f64)).collect()),
        censored_t1: count(&|r| r.t1.is_censored()),
        censored_t2: count(&|r| r.t2.is_censored()),
        never_above_t1: count(&|r| r.t1 == Detection::NeverAbove),
        diverged: count(&|r| r.divergence.is_some()),
    }
}

/// Runs every (cell, run) pair, concurrently when `parallel`; results are identical either way.
pub fn run_sweep(spec: &SweepSpec, parallel: bool) -> Result<SweepResult> {
    spec.validate()?;
    let tasks: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|cell| (0..spec.runs).map(move |run| (cell, run)))
        .collect();
    let work = |&(cell, run): &(usize, usize)| -> Result<CellRun> {
        let cell_spec = spec.cell_spec(cell)?;
        let outcome = run_cell(&cell_spec, run_seed(spec.base_seed, cell, run))?;
        Ok(CellRun {
            cell,
            run,
            param_value: spec.values[cell],
            outcome,
        })
    };
    let results: Vec<Result<CellRun>> = if parallel {
        tasks.par_iter().map(work).collect()
    } else {
        tasks.iter().map(work).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = (0..spec.values.len())
        .map(|cell| {
            let reports: Vec<&GrokReport> = runs
                .iter()
                .filter(|r| r.cell == cell)
                .map(|r| &r.outcome.report)
                .collect();
            summarize(Some(spec.values[cell]), &reports)
        })
        .collect();
    Ok(SweepResult { runs, summary })
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.is_infinite() => if x > 0.0 { "inf" } else { "-inf" }.to_string(),
        Some(x) => format!("{x}"),
    }
}

/// Step of a detection for the aggregate table: the horizon when censored, empty when undefined.
fn fmt_time(d: &Detection) -> String {
    match d {
        Detection::Resolved { step } => step.to_string(),
        Detection::Censored { horizon } => horizon.to_string(),
        Detection::NeverAbove | Detection::Unavailable => String::new(),
    }
}

pub fn aggregate_row(param_value: Option<f64>, run: usize, report: &GrokReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        fmt_num(param_value),
        run,
        report.seed,
        fmt_time(&report.t1),
        fmt_time(&report.t2),
        report.gap.map(|g| g.to_string()).unwrap_or_default(),
        fmt_num(report.t1_bound()),
        fmt_num(report.t2_bound()),
        report.t1.is_censored(),
        report.t2.is_censored(),
    )
}

pub fn summary_csv(summary: &[CellSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summary {
        let parts = |sp: Option<Spread>| {
            [sp.map(|x| x.median), sp.map(|x| x.p10), sp.map(|x| x.p90)]
                .map(fmt_num)
                .join(",")
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt_num(s.param_value),
            s.runs,
            parts(s.t1),
            parts(s.t2),
            parts(s.gap),
            s.censored_t1,
            s.censored_t2,
            s.never_above_t1,
            s.diverged
        ));
    }
    out
}

impl SweepResult {
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from(AGGREGATE_HEADER);
        out.push('\n');
        for r in &self.runs {
            out.push_str(&aggregate_row(Some(r.param_value), r.run, &r.outcome.report));
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.summary)
    }

    /// Median t₂ per cell, `None` where every run was censored or undefined.
    pub fn median_t2(&self) -> Vec<Option<f64>> {
        self.summary.iter().map(|s| s.t2.map(|x| x.median)).collect()
    }

    pub fn median_t1(&self) -> Vec<Option<f64>> {
        self.summary.iter().map(|s| s.t1.map(|x| x.median)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.1), 1.4);
        assert!((quantile(&v, 0.9) - 4.6).abs() < 1e-12);
        let w = [1.0, f64::INFINITY, f64::INFINITY];
        assert_eq!(quantile(&w, 0.5), f64::INFINITY);
        assert_eq!(quantile(&w, 0.25), f64::INFINITY);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn count_values() {
        assert_eq!(as_count(50.0, "n").unwrap(), 50);
        assert!(as_count(2.5, "n").is_err());
        assert!(as_count(0.0, "m").is_err());
    }

    #[test]
    fn seeds_differ_per_cell_and_run() {
        let a = run_seed(1, 0, 0);
        assert_ne!(a, run_seed(1, 0, 1));
        assert_ne!(a, run_seed(1, 1, 0));
        assert_eq!(a, run_seed(1, 0, 0));
    }
}

//! Detection of the overfitting time t₁ and the generalization time t₂, per run and over sweeps.

mod detect;
mod experiment;
mod sweep;

pub use detect::{
    Detected, Detection, Resolution, Thresholds, detect_t1, detect_t1_first, detect_t1_spectral, detect_t2,
    detect_t2_spectral,
};
pub use experiment::{
    DivergenceNote, ExperimentKind, ExperimentSpec, FALLBACK_HORIZON, GrokReport, HORIZON_BOUND_MULTIPLE,
    RunOutcome, TeacherChoice, bounds_report, default_horizon, run_cell,
};
pub use sweep::{
    AGGREGATE_HEADER, CellRun, CellSummary, SUMMARY_HEADER, Spread, SweepParam, SweepResult, SweepSpec,
    aggregate_row, quantile, run_seed, run_sweep, spread, summarize, summary_csv,
};

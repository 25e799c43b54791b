//! Closed- and open-world evaluation, threshold tuning, prompt sweeps and
//! run aggregation.

mod pipeline;
mod report;
mod resolve;
mod summary;
pub mod sweep;

pub use pipeline::{
    evaluate_closed, evaluate_open_world, run_suite, tune_threshold, CaseContext, IclPipeline, Pipeline, QueryCase,
    Suite,
};
pub use report::{
    closed_report, default_grid, f1, open_world_report, predicted_oos, tune_threshold_records, ClassStats,
    EvalReport, Gold, NotaStats, OosKind, OosReport, PredictionRecord, ThresholdCurve,
};
pub use resolve::{resolve_prediction, Resolution};
pub use summary::{aggregate_runs, aggregate_values, quantiles, Metric, RunSummary};
pub use sweep::{edit_effect, generate_sweep, EditEffect, SweepAxes, SweepPoint, SweepResult};

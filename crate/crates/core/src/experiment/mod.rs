//! Config-driven sweep over variants, data fractions, learning rates,
//! weight decays and seeds, with a resumable results store, report emission
//! and the data-parallel scaling study.

mod config;
mod report;
mod runner;
mod scaling;
mod store;
mod sweep;

pub use config::{ExperimentConfig, Metric, ModelConfig, PretrainConfig, Variant, ZeroShotInit};
pub use report::{
    build_report, emit_report, mean_std, plot_data_csv, report_csv, report_json, select_best_lr, selection_csv,
    Candidate, ExperimentReport, ReportFormat, ReportRow, MISSING,
};
pub use runner::{run_variant, run_zero_shot, ExperimentContext, SplitMetrics, VariantRun};
pub use scaling::{run_scaling_rank, run_scaling_study, ScalingConfig, ScalingReport, ScalingRow};
pub use store::{read_records, ResultsStore, RunKey, RunOutcome, RunRecord, RESULTS_ENV};
pub use sweep::{execute, run_sweep, sweep_keys};

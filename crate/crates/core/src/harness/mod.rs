//! Experiment orchestration: configuration, the defense/attack grid, and reports.

mod config;
mod experiment;
mod report;

pub use config::{AttackGrid, DataSource, DatasetConfig, Defense, ExecSetting, ExecutionConfig, ExperimentConfig};
pub use experiment::{
    apply_execution, attack_records, attack_seed, attacked_metrics, build_data, clean_metrics, denormalized_metrics, eval_budget, new_model, round4, run_experiment,
    scaler_meta, train_clean_model, train_defense, train_policy_for, EvalReport, ReportCell, SeedValue, Summary,
};
pub use report::{emit_report, report_csv, report_json, write_charts, CSV_HEADER};

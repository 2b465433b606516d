//! Rollout collection, training loops, the variance probe and experiment runs.

mod buffer;
mod config;
mod experiment;
mod metrics;
mod probe;
mod train;

pub use buffer::{collect_rollouts, RolloutBuffer};
pub use config::TrainConfig;
pub use experiment::{
    build_policy, compare_runs, evaluate_policy, pretrain_base, run_experiment, RunOutcome,
};
pub use metrics::{
    write_metrics_csv, write_variance_csv, MetricsRow, METRICS_HEADER, VARIANCE_HEADER,
};
pub use probe::{
    fit_loglog_slope, variance_probe, variance_probe_with, variance_sweep, ProbeRow,
    VarianceReport, MIN_RESAMPLES,
};
pub use train::{estimate, snapshot_baselines, train_epoch, train_pass, EpochStats, TrainState};

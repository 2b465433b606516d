use std::io::Write;

use super::VarianceReport;

pub const METRICS_HEADER: &str =
    "run_id,estimator,k,seed,epoch,mean_reward,surrogate_value,grad_norm,clip_active_fraction,wallclock_s";
pub const VARIANCE_HEADER: &str = "k,resamples,cov_trace,slope_loglog";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub estimator: String,
    pub k: usize,
    pub seed: u64,
    pub epoch: usize,
    pub mean_reward: f64,
    pub surrogate_value: f64,
    pub grad_norm: f64,
    pub clip_active_fraction: f64,
    pub wallclock_s: f64,
}

/// Header plus one LF-terminated line per row.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.estimator,
            r.k,
            r.seed,
            r.epoch,
            r.mean_reward,
            r.surrogate_value,
            r.grad_norm,
            r.clip_active_fraction,
            r.wallclock_s
        )?;
    }
    w.flush()
}

/// One line per probed `k`, then a summary line `all,<resamples>,,<slope>`.
pub fn write_variance_csv<W: Write>(mut w: W, report: &VarianceReport) -> std::io::Result<()> {
    writeln!(w, "{VARIANCE_HEADER}")?;
    for r in &report.rows {
        writeln!(w, "{},{},{},", r.k, r.resamples, r.cov_trace)?;
    }
    if let Some(slope) = report.slope_loglog {
        let resamples = report.rows.first().map_or(0, |r| r.resamples);
        writeln!(w, "all,{resamples},,{slope}")?;
    }
    w.flush()
}

//! Estimator variance at a frozen policy.

use rayon::prelude::*;

use crate::diffusion::DiffusionPolicy;
use crate::estimators::{EstimatorKind, PromptBaseline};
use crate::rewards::{reward_registry, RewardFn};
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

use super::train::{estimate, snapshot_baselines, TrainState};
use super::{collect_rollouts, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub estimator: EstimatorKind,
    pub k: usize,
    pub resamples: usize,
    /// Sum over coordinates of the sample variance of the gradient estimate.
    pub cov_trace: f64,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub rows: Vec<ProbeRow>,
    /// Least-squares slope of `ln cov_trace` against `ln k` over the rows.
    pub slope_loglog: Option<f64>,
}

/// Re-estimates `config.estimator` at `config.k` on `num_resamples` fresh
/// buffers of `groups` prompt groups, all drawn from the same frozen
/// `policy`. PPO uses a fresh running-mean baseline on every resample, so
/// its advantages are the raw rewards.
pub fn variance_probe(
    policy: &DiffusionPolicy,
    config: &TrainConfig,
    groups: usize,
    num_resamples: usize,
) -> Result<ProbeRow> {
    let reward = reward_registry(&config.reward_name)?;
    variance_probe_with(policy, config, &reward, groups, num_resamples)
}

pub const MIN_RESAMPLES: usize = 100;

/// [`variance_probe`] against an arbitrary reward instead of `config.reward_name`.
pub fn variance_probe_with(
    policy: &DiffusionPolicy,
    config: &TrainConfig,
    reward: &dyn RewardFn,
    groups: usize,
    num_resamples: usize,
) -> Result<ProbeRow> {
    if num_resamples < MIN_RESAMPLES {
        return Err(Error::Config(format!(
            "variance probe needs at least {MIN_RESAMPLES} resamples, got {num_resamples}"
        )));
    }
    config.validate()?;
    let state = TrainState::new(policy.clone(), config);
    let fresh = PromptBaseline::new(policy.num_contexts(), PromptBaseline::DEFAULT_DECAY);
    let epoch_base = (config.k as u64) << 32;

    let grads = (0..num_resamples)
        .into_par_iter()
        .map(|r| {
            let key = StreamKey::new(config.seed, Purpose::Probe, epoch_base | r as u64);
            let buffer = collect_rollouts(policy, reward, groups, config.k, key)?;
            let baselines = snapshot_baselines(&fresh, &buffer);
            Ok(estimate(&state, config, &buffer.groups, &baselines)?.grad)
        })
        .collect::<Result<Vec<_>>>()?;

    let dim = policy.params.len();
    let n = num_resamples as f64;
    let mut mean = vec![0.0; dim];
    for g in &grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for g in &grads {
        for ((s, v), m) in var.iter_mut().zip(g).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n - 1.0);
    Ok(ProbeRow {
        estimator: config.estimator,
        k: config.k,
        resamples: num_resamples,
        cov_trace: var.iter().sum(),
        std_err: var.iter().map(|v| (v / n).sqrt()).collect(),
        mean,
    })
}

/// Probes PPO at `k = 1` and LOOP at every `k >= 2`, then fits the log-log slope.
pub fn variance_sweep(
    policy: &DiffusionPolicy,
    config: &TrainConfig,
    ks: &[usize],
    groups: usize,
    num_resamples: usize,
) -> Result<VarianceReport> {
    let rows = ks
        .iter()
        .map(|&k| {
            let estimator = if k == 1 {
                EstimatorKind::PpoClip
            } else {
                EstimatorKind::Loop
            };
            let cfg = TrainConfig {
                estimator,
                k,
                ..config.clone()
            };
            variance_probe(policy, &cfg, groups, num_resamples)
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, r.cov_trace)).collect();
    Ok(VarianceReport {
        slope_loglog: fit_loglog_slope(&points),
        rows,
    })
}

/// Ordinary least squares slope of `ln y` on `ln x`. `None` with fewer than
/// two distinct `x` or any non-positive value.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

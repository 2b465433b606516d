use rand::seq::SliceRandom;

use crate::diffusion::{DiffusionPolicy, Trajectory, TrajectoryGroup};
use crate::estimators::{
    loop_surrogate_grad, ppo_surrogate_grad, reinforce_bc_grad, reinforce_grad, rloo_grad,
    EstimatorKind, GradientEstimate, PromptBaseline,
};
use crate::nn::{clip_grad_norm, AdamWState};
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

use super::{RolloutBuffer, TrainConfig};

/// Mutable training state: parameters, optimizer moments and the PPO
/// running-mean baseline. Single writer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: DiffusionPolicy,
    pub optimizer: AdamWState,
    pub baseline: PromptBaseline,
}

impl TrainState {
    pub fn new(policy: DiffusionPolicy, config: &TrainConfig) -> Self {
        let optimizer = AdamWState::new(config.optimizer(), policy.params.len());
        let baseline = PromptBaseline::new(policy.num_contexts(), PromptBaseline::DEFAULT_DECAY);
        Self {
            policy,
            optimizer,
            baseline,
        }
    }

    /// Takes one ascent step along `estimate.grad`. Returns the pre-clip norm.
    fn apply(&mut self, estimate: &GradientEstimate, max_grad_norm: f64) -> Result<f64> {
        let mut grad: Vec<f64> = estimate.grad.iter().map(|g| -g).collect();
        let norm = clip_grad_norm(&mut grad, max_grad_norm);
        self.optimizer.step(&mut self.policy.params, &grad)?;
        self.policy.version += 1;
        Ok(norm)
    }
}

/// Aggregates over the optimizer steps of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub mean_reward: f64,
    pub surrogate_value: f64,
    pub grad_norm: f64,
    pub clip_active_fraction: f64,
    pub optimizer_steps: usize,
}

impl EpochStats {
    fn add(&mut self, est: &GradientEstimate, norm: f64) {
        self.surrogate_value += est.surrogate_value;
        self.grad_norm += norm;
        self.clip_active_fraction += est.clip_active_fraction;
        self.optimizer_steps += 1;
    }

    fn finish(mut self) -> Self {
        if self.optimizer_steps > 0 {
            let n = self.optimizer_steps as f64;
            self.surrogate_value /= n;
            self.grad_norm /= n;
            self.clip_active_fraction /= n;
        }
        self
    }
}

fn flatten(groups: &[TrajectoryGroup]) -> Vec<Trajectory> {
    groups
        .iter()
        .flat_map(|g| g.members().iter().cloned())
        .collect()
}

/// Frozen per-member PPO baselines for a buffer, read from the running mean
/// before the buffer's own rewards are folded in.
pub fn snapshot_baselines(baseline: &PromptBaseline, buffer: &RolloutBuffer) -> Vec<Vec<f64>> {
    buffer
        .groups
        .iter()
        .map(|g| vec![baseline.value(g.context().id()); g.k()])
        .collect()
}

/// The configured estimator on `groups` against the current parameters.
pub fn estimate(
    state: &TrainState,
    config: &TrainConfig,
    groups: &[TrajectoryGroup],
    baselines: &[Vec<f64>],
) -> Result<GradientEstimate> {
    let policy = &state.policy;
    match config.estimator {
        EstimatorKind::Reinforce => {
            let mut est = reinforce_grad(policy, &flatten(groups))?;
            est.k_used = config.k;
            Ok(est)
        }
        EstimatorKind::ReinforceBc => reinforce_bc_grad(policy, groups),
        EstimatorKind::Rloo => rloo_grad(policy, groups),
        EstimatorKind::PpoClip => {
            let b: Vec<f64> = baselines.iter().flatten().copied().collect();
            let mut est = ppo_surrogate_grad(policy, &flatten(groups), &b, &config.clip_config()?)?;
            est.k_used = config.k;
            Ok(est)
        }
        EstimatorKind::Loop => loop_surrogate_grad(policy, groups, &config.clip_config()?),
    }
}

/// One pass over `buffer`. On-policy kinds take a single full-batch step and
/// refuse a buffer from any other snapshot. Clipped kinds shuffle the groups
/// and step once per minibatch, reading the stored sampling log-probs.
pub fn train_pass(
    state: &mut TrainState,
    buffer: &mut RolloutBuffer,
    config: &TrainConfig,
    baselines: &[Vec<f64>],
    shuffle_key: StreamKey,
    stats: &mut EpochStats,
) -> Result<()> {
    if config.estimator.is_on_policy() && buffer.sampler_version != state.policy.version {
        return Err(Error::Staleness {
            sampled: buffer.sampler_version,
            current: state.policy.version,
        });
    }
    buffer.record_pass(config.effective_inner_epochs())?;

    if config.estimator.is_on_policy() {
        let est = estimate(state, config, &buffer.groups, baselines)?;
        let norm = state.apply(&est, config.max_grad_norm)?;
        stats.add(&est, norm);
        return Ok(());
    }

    let mut order: Vec<usize> = (0..buffer.groups.len()).collect();
    order.shuffle(&mut shuffle_key.rng(buffer.passes_used() as u64));
    for chunk in order.chunks(config.minibatch_groups) {
        let groups: Vec<TrajectoryGroup> =
            chunk.iter().map(|&i| buffer.groups[i].clone()).collect();
        let b: Vec<Vec<f64>> = chunk.iter().map(|&i| baselines[i].clone()).collect();
        let est = estimate(state, config, &groups, &b)?;
        let norm = state.apply(&est, config.max_grad_norm)?;
        stats.add(&est, norm);
    }
    Ok(())
}

/// All passes a buffer is allowed, then folds its rewards into the running baseline.
pub fn train_epoch(
    state: &mut TrainState,
    buffer: &mut RolloutBuffer,
    config: &TrainConfig,
    epoch: u64,
) -> Result<EpochStats> {
    let baselines = snapshot_baselines(&state.baseline, buffer);
    let key = StreamKey::new(config.seed, Purpose::Shuffle, epoch);
    let mut stats = EpochStats {
        mean_reward: buffer.mean_reward(),
        ..EpochStats::default()
    };
    while buffer.passes_used() < config.effective_inner_epochs() {
        train_pass(state, buffer, config, &baselines, key, &mut stats)?;
    }
    state.baseline.update(buffer.trajectories());
    Ok(stats.finish())
}

use rayon::prelude::*;

use crate::diffusion::{DiffusionPolicy, Trajectory, TrajectoryGroup};
use crate::rewards::RewardFn;
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Rollouts from one policy snapshot, plus how many training passes have read them.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub groups: Vec<TrajectoryGroup>,
    pub sampler_version: u64,
    passes_used: usize,
}

impl RolloutBuffer {
    pub fn new(groups: Vec<TrajectoryGroup>) -> Result<Self> {
        let version = groups
            .first()
            .map(|g| g.sampler_version())
            .ok_or_else(|| Error::Config("empty rollout buffer".into()))?;
        if groups.iter().any(|g| g.sampler_version() != version) {
            return Err(Error::Contract("buffer mixes policy snapshots".into()));
        }
        Ok(Self {
            groups,
            sampler_version: version,
            passes_used: 0,
        })
    }

    pub fn passes_used(&self) -> usize {
        self.passes_used
    }

    pub(crate) fn record_pass(&mut self, budget: usize) -> Result<()> {
        if self.passes_used >= budget {
            return Err(Error::Contract(format!(
                "rollout buffer already used for {} of {budget} passes",
                self.passes_used
            )));
        }
        self.passes_used += 1;
        Ok(())
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.groups.iter().flat_map(|g| g.members())
    }

    pub fn mean_reward(&self) -> f64 {
        let (sum, n) = self
            .trajectories()
            .fold((0.0, 0usize), |(s, n), t| (s + t.reward, n + 1));
        sum / n as f64
    }
}

/// Samples `groups` groups of `k` trajectories, prompts cycled `0, 1, .., C-1, 0, ..`.
/// Trajectory `j` of group `g` uses stream `g * k + j` of `key`.
pub fn collect_rollouts(
    policy: &DiffusionPolicy,
    reward: &dyn RewardFn,
    groups: usize,
    k: usize,
    key: StreamKey,
) -> Result<RolloutBuffer> {
    if groups == 0 || k == 0 {
        return Err(Error::Config(
            "need at least one group and one trajectory per group".into(),
        ));
    }
    let n_ctx = policy.num_contexts();
    let trajs = (0..groups * k)
        .into_par_iter()
        .map(|idx| {
            let context = policy.context((idx / k) % n_ctx)?;
            policy.rollout(&context, reward, &mut key.rng(idx as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = trajs.into_iter();
    let groups = (0..groups)
        .map(|_| TrajectoryGroup::new(it.by_ref().take(k).collect()))
        .collect::<Result<Vec<_>>>()?;
    RolloutBuffer::new(groups)
}

//! Shared fixtures for the criterion benches.

use looprl_core::rewards::reward_registry;
use looprl_core::rng::{Purpose, StreamKey};
use looprl_core::trainer::{build_policy, collect_rollouts, RolloutBuffer, TrainConfig};
use looprl_core::{DiffusionPolicy, Reward};

pub struct Fixture {
    pub config: TrainConfig,
    pub policy: DiffusionPolicy,
    pub reward: Reward,
    pub buffer: RolloutBuffer,
}

/// Untrained default-sized policy with one buffer of `groups` x `k` rollouts.
pub fn fixture(groups: usize, k: usize) -> Fixture {
    let config = TrainConfig {
        k,
        ..TrainConfig::default()
    };
    let policy = build_policy(&config).expect("default config is valid");
    let reward = reward_registry(&config.reward_name).expect("registered");
    let buffer = collect_rollouts(
        &policy,
        &reward,
        groups,
        k,
        StreamKey::new(0, Purpose::Rollout, 0),
    )
    .expect("rollouts");
    Fixture {
        config,
        policy,
        reward,
        buffer,
    }
}

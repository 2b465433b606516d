use crate::diffusion::{MixtureConfig, PretrainConfig, DATA_DIM};
use crate::estimators::{ClipConfig, EstimatorKind, SurrogateForm};
use crate::nn::AdamWConfig;
use crate::rewards::reward_registry;
use crate::{Error, Result};

/// Everything that determines a run. `(config, seed)` fixes every output.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub estimator: EstimatorKind,
    pub k: usize,
    /// Clip half-width; `f64::INFINITY` disables clipping (unclipped IS ablation).
    pub epsilon: f64,
    pub surrogate: SurrogateForm,
    pub epochs: usize,
    pub groups_per_epoch: usize,
    /// Passes over each collected buffer. Ignored (treated as 1) for on-policy kinds.
    pub inner_epochs: usize,
    pub minibatch_groups: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub reward_name: String,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: Vec<usize>,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub dataset_size: usize,
    /// Label/mode agreement of the pretraining data (0 = prompts ignored).
    pub binding: f64,
    /// Rollouts per prompt when scoring a policy.
    pub validation_per_prompt: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Loop,
            k: 4,
            epsilon: 0.1,
            surrogate: SurrogateForm::ClippedRatio,
            epochs: 30,
            groups_per_epoch: 64,
            inner_epochs: 4,
            minibatch_groups: 16,
            seed: 0,
            lr: 1e-4,
            weight_decay: 1e-4,
            max_grad_norm: 1.0,
            reward_name: "quadrant_binding".into(),
            steps: 20,
            beta_start: 1e-4,
            beta_end: 0.2,
            hidden: vec![32, 32],
            pretrain_steps: 10_000,
            pretrain_batch: 128,
            pretrain_lr: 3e-3,
            dataset_size: 4096,
            binding: 0.0,
            validation_per_prompt: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be >= 1".into());
        }
        if self.estimator.needs_groups() && self.k < 2 {
            return bad(format!("{} needs k >= 2, got {}", self.estimator, self.k));
        }
        if self.estimator.is_clipped() && self.epsilon != f64::INFINITY {
            ClipConfig::new(self.epsilon)?;
        }
        if self.groups_per_epoch == 0 || self.minibatch_groups == 0 || self.inner_epochs == 0 {
            return bad("groups_per_epoch, minibatch_groups and inner_epochs must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative".into());
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.binding) {
            return bad(format!("binding must lie in [0, 1], got {}", self.binding));
        }
        if self.validation_per_prompt == 0 || self.dataset_size == 0 || self.pretrain_batch == 0 {
            return bad(
                "validation_per_prompt, dataset_size and pretrain_batch must be >= 1".into(),
            );
        }
        reward_registry(&self.reward_name)?;
        Ok(())
    }

    pub fn effective_inner_epochs(&self) -> usize {
        if self.estimator.is_on_policy() {
            1
        } else {
            self.inner_epochs
        }
    }

    pub fn clip_config(&self) -> Result<ClipConfig> {
        let cfg = if self.epsilon == f64::INFINITY {
            ClipConfig::unclipped()
        } else {
            ClipConfig::new(self.epsilon)?
        };
        Ok(cfg.with_form(self.surrogate))
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch,
            optimizer: AdamWConfig {
                lr: self.pretrain_lr,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            max_grad_norm: self.max_grad_norm,
            seed: self.seed,
        }
    }

    pub fn mixture(&self) -> MixtureConfig {
        MixtureConfig {
            binding: self.binding,
            ..MixtureConfig::default()
        }
    }

    pub fn data_dim(&self) -> usize {
        DATA_DIM
    }

    pub fn run_id(&self) -> String {
        format!("{}-k{}-s{}", self.estimator, self.k, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn k_rules() {
        let with = |estimator, k| TrainConfig {
            estimator,
            k,
            ..TrainConfig::default()
        };
        assert!(with(EstimatorKind::Reinforce, 1).validate().is_ok());
        assert!(with(EstimatorKind::PpoClip, 1).validate().is_ok());
        assert!(with(EstimatorKind::Loop, 1).validate().is_err());
        assert!(with(EstimatorKind::Rloo, 1).validate().is_err());
        assert!(with(EstimatorKind::ReinforceBc, 1).validate().is_err());
    }

    #[test]
    fn on_policy_uses_one_pass() {
        let cfg = TrainConfig {
            estimator: EstimatorKind::Rloo,
            inner_epochs: 4,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.effective_inner_epochs(), 1);
    }

    #[test]
    fn infinite_epsilon_is_unclipped() {
        let cfg = TrainConfig {
            epsilon: f64::INFINITY,
            ..TrainConfig::default()
        };
        cfg.validate().unwrap();
        assert!(cfg.clip_config().unwrap().is_unclipped());
        let bad = TrainConfig {
            epsilon: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

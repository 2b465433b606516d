use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use crate::diffusion::{mixture_dataset, pretrain_ddpm, DiffusionPolicy, NoiseSchedule};
use crate::nn::save_checkpoint;
use crate::rewards::{reward_registry, RewardFn};
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

use super::{
    collect_rollouts, train_epoch, write_metrics_csv, MetricsRow, TrainConfig, TrainState,
};

/// Freshly initialised (untrained) policy for `config`.
pub fn build_policy(config: &TrainConfig) -> Result<DiffusionPolicy> {
    let schedule = NoiseSchedule::linear(config.steps, config.beta_start, config.beta_end)?;
    let n_ctx = reward_registry(&config.reward_name)?.spec().num_contexts();
    let mut rng = StreamKey::new(config.seed, Purpose::Init, 0).rng(0);
    DiffusionPolicy::new(
        schedule,
        config.data_dim(),
        n_ctx,
        config.hidden.clone(),
        None,
        &mut rng,
    )
}

/// Pretrains a base policy on the synthetic mixture. Returns it with the loss trace.
pub fn pretrain_base(config: &TrainConfig) -> Result<(DiffusionPolicy, Vec<f64>)> {
    let mut policy = build_policy(config)?;
    let data = mixture_dataset(config.dataset_size, config.seed, &config.mixture());
    let trace = pretrain_ddpm(&mut policy, &data, &config.pretrain_config())?;
    Ok((policy, trace))
}

/// Mean reward over `per_prompt` fresh rollouts for every prompt. The streams
/// depend only on `seed`, so two policies scored with the same seed see the
/// same initial noise.
pub fn evaluate_policy(
    policy: &DiffusionPolicy,
    reward: &dyn RewardFn,
    per_prompt: usize,
    seed: u64,
) -> Result<f64> {
    let key = StreamKey::new(seed, Purpose::Validation, 0);
    let mut total = 0.0;
    for c in 0..policy.num_contexts() {
        let context = policy.context(c)?;
        for j in 0..per_prompt {
            let mut rng = key.rng((c * per_prompt + j) as u64);
            total += policy.rollout(&context, reward, &mut rng)?.reward;
        }
    }
    Ok(total / (policy.num_contexts() * per_prompt) as f64)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: TrainConfig,
    pub rows: Vec<MetricsRow>,
    pub policy: DiffusionPolicy,
    pub base_validation: f64,
    pub final_validation: f64,
}

impl RunOutcome {
    /// Writes `metrics.csv` and `policy.ckpt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("metrics.csv");
        let file = File::create(&csv).map_err(|e| Error::io(&csv, e))?;
        write_metrics_csv(BufWriter::new(file), &self.rows).map_err(|e| Error::io(&csv, e))?;
        save_checkpoint(&dir.join("policy.ckpt"), &self.policy.to_checkpoint())
    }
}

/// Pretrains (unless `base` is given), then runs `config.epochs` rounds of
/// collect + train, one metrics row per round. With `timing` off the
/// wall-clock column is 0 so output is byte-reproducible.
pub fn run_experiment(
    config: &TrainConfig,
    base: Option<&DiffusionPolicy>,
    timing: bool,
) -> Result<RunOutcome> {
    config.validate()?;
    let reward = reward_registry(&config.reward_name)?;
    let base = match base {
        Some(p) => p.clone(),
        None => pretrain_base(config)?.0,
    };
    let base_validation =
        evaluate_policy(&base, &reward, config.validation_per_prompt, config.seed)?;

    let mut state = TrainState::new(base, config);
    let run_id = config.run_id();
    let mut rows = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let key = StreamKey::new(config.seed, Purpose::Rollout, epoch as u64);
        let mut buffer = collect_rollouts(
            &state.policy,
            &reward,
            config.groups_per_epoch,
            config.k,
            key,
        )?;
        let stats = train_epoch(&mut state, &mut buffer, config, epoch as u64)?;
        rows.push(MetricsRow {
            run_id: run_id.clone(),
            estimator: config.estimator.name().to_string(),
            k: config.k,
            seed: config.seed,
            epoch,
            mean_reward: stats.mean_reward,
            surrogate_value: stats.surrogate_value,
            grad_norm: stats.grad_norm,
            clip_active_fraction: stats.clip_active_fraction,
            wallclock_s: if timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    let final_validation = evaluate_policy(
        &state.policy,
        &reward,
        config.validation_per_prompt,
        config.seed,
    )?;
    Ok(RunOutcome {
        config: config.clone(),
        rows,
        policy: state.policy,
        base_validation,
        final_validation,
    })
}

/// Runs every variant on every seed. Each seed pretrains one base policy
/// (from the first variant's settings) that all variants start from.
pub fn compare_runs(
    variants: &[TrainConfig],
    seeds: &[u64],
    timing: bool,
) -> Result<Vec<RunOutcome>> {
    let first = variants
        .first()
        .ok_or_else(|| Error::Config("compare needs at least one estimator config".into()))?;
    let mut out = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        let (base, _) = pretrain_base(&TrainConfig {
            seed,
            ..first.clone()
        })?;
        for v in variants {
            let cfg = TrainConfig { seed, ..v.clone() };
            out.push(run_experiment(&cfg, Some(&base), timing)?);
        }
    }
    Ok(out)
}

use rand::Rng;

use crate::nn::{clip_grad_norm, mlp_backward_into, mlp_forward, AdamWConfig, AdamWState};
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

use super::dataset::Sample;
use super::policy::standard_normal;
use super::{Context, DiffusionPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 128,
            optimizer: AdamWConfig {
                lr: 3e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            max_grad_norm: 1.0,
            seed: 0,
        }
    }
}

/// Denoising pretraining: regress the network mean onto the true posterior
/// mean `q(x_{t-1} | x_t, x_0)` at uniformly drawn timesteps. Returns the
/// per-step minibatch loss.
pub fn pretrain_ddpm(
    policy: &mut DiffusionPolicy,
    dataset: &[Sample],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if let Some(s) = dataset.iter().find(|s| s.x0.len() != policy.data_dim()) {
        return Err(Error::Shape {
            what: "dataset sample",
            expected: policy.data_dim(),
            got: s.x0.len(),
        });
    }
    let contexts = dataset
        .iter()
        .map(|s| policy.context(s.context))
        .collect::<Result<Vec<Context>>>()?;

    let steps = policy.steps();
    let n_params = policy.params.len();
    let mut opt = AdamWState::new(cfg.optimizer, n_params);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut grad = vec![0.0; n_params];
    let scale = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        let mut rng = StreamKey::new(cfg.seed, Purpose::Pretrain, step as u64).rng(0);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..dataset.len());
            let t = rng.random_range(1..=steps);
            let noise = standard_normal(policy.data_dim(), &mut rng);
            let x0 = &dataset[idx].x0;
            let xt = policy.schedule.forward_noising(x0, t, &noise)?;
            let target = policy.schedule.posterior_mean(x0, &xt, t)?;
            let input = policy.network_input(&xt, &contexts[idx], t);
            let (mean, tape) = mlp_forward(&policy.spec, &policy.params, &input)?;
            let resid: Vec<f64> = mean.iter().zip(&target).map(|(m, y)| m - y).collect();
            loss += resid.iter().map(|r| r * r).sum::<f64>() * scale;
            let cot: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
            mlp_backward_into(&tape, &cot, scale, &mut grad)?;
        }
        clip_grad_norm(&mut grad, cfg.max_grad_norm);
        opt.step(&mut policy.params, &grad)?;
        trace.push(loss);
    }
    policy.version += 1;
    Ok(trace)
}

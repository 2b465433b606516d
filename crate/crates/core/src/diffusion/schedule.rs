use crate::{Error, Result};

/// Fixed DDPM coefficients for `T` steps. Index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` (step 1) to `beta_end` (step T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {b}")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index {
                index: t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    /// Samples `q(x_t | x_0)` given standard-normal `noise`.
    pub fn forward_noising(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_step(t)?;
        Ok(noise_with_alpha_bar(self.alpha_bar[t - 1], x0, noise))
    }

    /// Mean of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_mean(&self, x0: &[f64], xt: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_step(t)?;
        let i = t - 1;
        let ab = self.alpha_bar[i];
        let ab_prev = if i == 0 { 1.0 } else { self.alpha_bar[i - 1] };
        let c0 = ab_prev.sqrt() * self.beta[i] / (1.0 - ab);
        let ct = self.alpha[i].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok(x0.iter().zip(xt).map(|(a, b)| c0 * a + ct * b).collect())
    }
}

pub(crate) fn noise_with_alpha_bar(alpha_bar: f64, x0: &[f64], noise: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(noise).map(|(x, n)| a * x + b * n).collect()
}

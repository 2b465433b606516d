use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::{mlp_backward_into, mlp_forward, Checkpoint, MlpSpec, ParamVector};
use crate::rewards::RewardFn;
use crate::{Error, Result};

use super::NoiseSchedule;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A prompt: an index into `0..num_contexts`, fed to the network one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Context {
    id: usize,
    num_contexts: usize,
}

impl Context {
    pub fn new(id: usize, num_contexts: usize) -> Result<Self> {
        if id >= num_contexts {
            return Err(Error::Config(format!(
                "context id {id} out of range for {num_contexts} contexts"
            )));
        }
        Ok(Self { id, num_contexts })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn embedding(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.num_contexts];
        e[self.id] = 1.0;
        e
    }
}

/// Log-density of an isotropic Gaussian.
pub fn gaussian_logpdf(x: &[f64], mean: &[f64], sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if x.len() != mean.len() {
        return Err(Error::Shape {
            what: "gaussian mean",
            expected: x.len(),
            got: mean.len(),
        });
    }
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * d * LN_2PI - d * sigma.ln() - sq / (2.0 * sigma * sigma))
}

/// One reverse-diffusion rollout, `x_T` first.
///
/// `step_logprobs[i]` is the sampling-time log-density of the transition
/// `states[i] -> states[i + 1]`, i.e. timestep `t = T - i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub context: Context,
    pub states: Vec<Vec<f64>>,
    pub step_logprobs: Vec<f64>,
    pub reward: f64,
    pub sampler_version: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has states")
    }

    pub fn steps(&self) -> usize {
        self.step_logprobs.len()
    }

    pub fn stored_logprob_sum(&self) -> f64 {
        self.step_logprobs.iter().sum()
    }
}

/// `K` trajectories for one prompt, all from the same policy snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGroup {
    context: Context,
    members: Vec<Trajectory>,
}

impl TrajectoryGroup {
    pub fn new(members: Vec<Trajectory>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("trajectory group needs at least one member".into()))?;
        let (context, version) = (first.context, first.sampler_version);
        if members
            .iter()
            .any(|m| m.context != context || m.sampler_version != version)
        {
            return Err(Error::Contract(
                "group members must share context and sampler version".into(),
            ));
        }
        Ok(Self { context, members })
    }

    pub fn context(&self) -> Context {
        self.context
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn sampler_version(&self) -> u64 {
        self.members[0].sampler_version
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.reward).collect()
    }
}

/// The reverse process as a stochastic policy: `x_{t-1} ~ N(mu(x_t, c, t), sigma_t^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub schedule: NoiseSchedule,
    /// Per-step standard deviation, index `t - 1`.
    pub sigma: Vec<f64>,
    num_contexts: usize,
    data_dim: usize,
    /// Bumped on every parameter update; stamped onto sampled trajectories.
    pub version: u64,
}

impl DiffusionPolicy {
    /// Builds a policy with `sigma_t = sqrt(beta_t)`.
    pub fn new(
        schedule: NoiseSchedule,
        data_dim: usize,
        num_contexts: usize,
        hidden: Vec<usize>,
        params: Option<ParamVector>,
        init_rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_contexts == 0 || data_dim == 0 {
            return Err(Error::Config(
                "need at least one context and data dimension".into(),
            ));
        }
        let spec = MlpSpec::new(data_dim + num_contexts + 1, hidden, data_dim)?;
        let params = match params {
            Some(p) if p.len() != spec.param_count() => {
                return Err(Error::Shape {
                    what: "policy parameters",
                    expected: spec.param_count(),
                    got: p.len(),
                })
            }
            Some(p) => p,
            None => spec.init_params(init_rng),
        };
        let sigma = schedule.beta().iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            spec,
            params,
            schedule,
            sigma,
            num_contexts,
            data_dim,
            version: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn context(&self, id: usize) -> Result<Context> {
        Context::new(id, self.num_contexts)
    }

    pub fn set_sigma(&mut self, sigma: Vec<f64>) -> Result<()> {
        if sigma.len() != self.steps() {
            return Err(Error::Shape {
                what: "sigma",
                expected: self.steps(),
                got: sigma.len(),
            });
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("sigma must be positive, got {s}")));
        }
        self.sigma = sigma;
        Ok(())
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

    /// `[x_t, one_hot(c), t / T]`.
    pub fn network_input(&self, x_t: &[f64], context: &Context, t: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.spec.input_dim());
        input.extend_from_slice(x_t);
        input.extend(context.embedding());
        input.push(t as f64 / self.steps() as f64);
        input
    }

    pub fn predict_mean(&self, x_t: &[f64], context: &Context, t: usize) -> Result<Vec<f64>> {
        self.check_step(t)?;
        let (mean, _) = mlp_forward(
            &self.spec,
            &self.params,
            &self.network_input(x_t, context, t),
        )?;
        check_finite(&mean, t)?;
        Ok(mean)
    }

    /// Samples `x_{t-1}` and returns it with its log-density.
    pub fn reverse_step<R: Rng + ?Sized>(
        &self,
        context: &Context,
        t: usize,
        x_t: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        let noise = standard_normal(self.data_dim, rng);
        self.reverse_step_with_noise(context, t, x_t, &noise)
    }

    /// Same as [`reverse_step`](Self::reverse_step) with the standard-normal
    /// draw supplied by the caller.
    pub fn reverse_step_with_noise(
        &self,
        context: &Context,
        t: usize,
        x_t: &[f64],
        noise: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        let mean = self.predict_mean(x_t, context, t)?;
        let sigma = self.sigma[t - 1];
        let next: Vec<f64> = mean.iter().zip(noise).map(|(m, n)| m + sigma * n).collect();
        let logp = gaussian_logpdf(&next, &mean, sigma)?;
        Ok((next, logp))
    }

    /// Full ancestral sampling from `x_T ~ N(0, I)`; the reward only sees `x_0`.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        context: &Context,
        reward: &dyn RewardFn,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let noise = standard_normal(self.data_dim * (self.steps() + 1), rng);
        self.rollout_with_noise(context, reward, &noise)
    }

    /// Rollout driven by `(T + 1) * data_dim` caller-supplied standard normals:
    /// the first block is `x_T`, then one block per reverse step.
    pub fn rollout_with_noise(
        &self,
        context: &Context,
        reward: &dyn RewardFn,
        noise: &[f64],
    ) -> Result<Trajectory> {
        let d = self.data_dim;
        let steps = self.steps();
        if noise.len() != d * (steps + 1) {
            return Err(Error::Shape {
                what: "rollout noise",
                expected: d * (steps + 1),
                got: noise.len(),
            });
        }
        let mut blocks = noise.chunks_exact(d);
        let mut states = Vec::with_capacity(steps + 1);
        let mut step_logprobs = Vec::with_capacity(steps);
        states.push(blocks.next().expect("sized above").to_vec());
        for (t, block) in (1..=steps).rev().zip(blocks) {
            let (next, logp) =
                self.reverse_step_with_noise(context, t, states.last().unwrap(), block)?;
            states.push(next);
            step_logprobs.push(logp);
        }
        let reward = reward.reward(states.last().unwrap(), context);
        if !reward.is_finite() {
            return Err(Error::Numeric(format!("reward {reward}")));
        }
        Ok(Trajectory {
            context: *context,
            states,
            step_logprobs,
            reward,
            sampler_version: self.version,
        })
    }

    fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.states.len() != self.steps() + 1 {
            return Err(Error::Shape {
                what: "trajectory states",
                expected: self.steps() + 1,
                got: traj.states.len(),
            });
        }
        if let Some(bad) = traj.states.iter().find(|s| s.len() != self.data_dim) {
            return Err(Error::Shape {
                what: "trajectory state",
                expected: self.data_dim,
                got: bad.len(),
            });
        }
        if traj.context.num_contexts() != self.num_contexts {
            return Err(Error::Shape {
                what: "context embedding",
                expected: self.num_contexts,
                got: traj.context.num_contexts(),
            });
        }
        Ok(())
    }

    /// Per-step log-densities of a stored trajectory under the current parameters.
    pub fn step_logprobs(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        self.check_trajectory(traj)?;
        let steps = self.steps();
        (0..steps)
            .map(|i| {
                let t = steps - i;
                let mean = self.predict_mean(&traj.states[i], &traj.context, t)?;
                gaussian_logpdf(&traj.states[i + 1], &mean, self.sigma[t - 1])
            })
            .collect()
    }

    /// `sum_t log p(x_{t-1} | x_t, c)` recomputed with the current parameters.
    pub fn trajectory_logprob_sum(&self, traj: &Trajectory) -> Result<f64> {
        Ok(self.step_logprobs(traj)?.iter().sum())
    }

    /// The log-prob sum and its gradient with respect to the parameters.
    pub fn trajectory_logprob_grad(&self, traj: &Trajectory) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let logps = self.accumulate_weighted_score(traj, |_, _| 1.0, &mut grad)?;
        Ok((logps.iter().sum(), grad))
    }

    /// Adds `sum_t w_t * grad log p_t` into `grad`, where `w_t = weight(i, log p_t)`
    /// is chosen after the step's current log-density is known. Returns the
    /// per-step log-densities. A zero weight skips that step's backward pass.
    pub fn accumulate_weighted_score(
        &self,
        traj: &Trajectory,
        mut weight: impl FnMut(usize, f64) -> f64,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_trajectory(traj)?;
        let steps = self.steps();
        let mut logps = Vec::with_capacity(steps);
        for i in 0..steps {
            let t = steps - i;
            let input = self.network_input(&traj.states[i], &traj.context, t);
            let (mean, tape) = mlp_forward(&self.spec, &self.params, &input)?;
            check_finite(&mean, t)?;
            let sigma = self.sigma[t - 1];
            let x = &traj.states[i + 1];
            let logp = gaussian_logpdf(x, &mean, sigma)?;
            logps.push(logp);
            let w = weight(i, logp);
            if w != 0.0 {
                // d log p / d mean = (x - mean) / sigma^2
                let cot: Vec<f64> = x
                    .iter()
                    .zip(&mean)
                    .map(|(xv, m)| (xv - m) / (sigma * sigma))
                    .collect();
                mlp_backward_into(&tape, &cot, w, grad)?;
            }
        }
        Ok(logps)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        Checkpoint {
            spec: self.spec.clone(),
            params: self.params.clone(),
            meta: vec![
                ("data_dim".into(), self.data_dim.to_string()),
                ("contexts".into(), self.num_contexts.to_string()),
                ("beta".into(), join(self.schedule.beta())),
                ("sigma".into(), join(&self.sigma)),
                ("version".into(), self.version.to_string()),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let get = |key: &str| {
            ckpt.meta(key)
                .ok_or_else(|| Error::parse("policy checkpoint", format!("missing meta `{key}`")))
        };
        let floats = |key: &str| -> Result<Vec<f64>> {
            get(key)?
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::parse("policy checkpoint", format!("{key}: {e}")))
                })
                .collect()
        };
        let int = |key: &str| -> Result<u64> {
            get(key)?
                .parse::<u64>()
                .map_err(|e| Error::parse("policy checkpoint", format!("{key}: {e}")))
        };
        let data_dim = int("data_dim")? as usize;
        let contexts = int("contexts")? as usize;
        let schedule = NoiseSchedule::from_betas(floats("beta")?)?;
        let sigma = floats("sigma")?;
        let version = int("version")?;
        if ckpt.spec.input_dim() != data_dim + contexts + 1 || ckpt.spec.output_dim() != data_dim {
            return Err(Error::parse(
                "policy checkpoint",
                "network shape does not match data_dim/contexts",
            ));
        }
        let mut policy = Self {
            spec: ckpt.spec,
            params: ckpt.params,
            schedule,
            sigma: Vec::new(),
            num_contexts: contexts,
            data_dim,
            version,
        };
        policy.set_sigma(sigma)?;
        Ok(policy)
    }
}

fn check_finite(mean: &[f64], t: usize) -> Result<()> {
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numeric(format!(
            "network mean at step {t}: {mean:?}"
        )));
    }
    Ok(())
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::reward_registry;
    use crate::rng::{Purpose, StreamKey};

    fn policy(steps: usize, seed: u64) -> DiffusionPolicy {
        let schedule = NoiseSchedule::linear(steps, 0.05, 0.3).unwrap();
        let mut rng = StreamKey::new(seed, Purpose::Check, 0).rng(0);
        let mut p = DiffusionPolicy::new(schedule, 2, 4, vec![8], None, &mut rng).unwrap();
        for v in p.params.as_mut_slice() {
            *v += rng.random_range(-0.2..0.2);
        }
        p
    }

    /// Density written out per coordinate, independent of `gaussian_logpdf`.
    fn oracle_logpdf(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
        x.iter()
            .zip(mean)
            .map(|(a, m)| {
                let z = (a - m) / sigma;
                (1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5 * z * z).exp()).ln()
            })
            .sum()
    }

    #[test]
    fn logpdf_cases() {
        assert!(
            (gaussian_logpdf(&[0.3], &[0.3], 1.0).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-15
        );
        assert!(
            (gaussian_logpdf(&[1.0], &[0.0], 1.0).unwrap() + 1.418_938_533_204_672_7).abs() < 1e-15
        );
        let (x, m, s) = ([0.37, -1.2], [0.1, -0.4], 0.65);
        assert!((gaussian_logpdf(&x, &m, s).unwrap() - oracle_logpdf(&x, &m, s)).abs() < 1e-12);
        assert!(matches!(
            gaussian_logpdf(&[0.0], &[0.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            gaussian_logpdf(&[0.0], &[0.0], -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn context_embedding() {
        let c = Context::new(2, 4).unwrap();
        assert_eq!(c.embedding(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(Context::new(4, 4).is_err());
    }

    #[test]
    fn zero_noise_step_lands_on_mean() {
        let p = policy(5, 1);
        let ctx = Context::new(1, 4).unwrap();
        let x = [0.4, -0.7];
        let (next, logp) = p.reverse_step_with_noise(&ctx, 3, &x, &[0.0, 0.0]).unwrap();
        let mean = p.predict_mean(&x, &ctx, 3).unwrap();
        assert_eq!(next, mean);
        assert_eq!(logp, gaussian_logpdf(&mean, &mean, p.sigma[2]).unwrap());
    }

    #[test]
    fn zero_network_unit_sigma_returns_noise() {
        let mut p = policy(4, 2);
        p.params = p.spec.zeros();
        p.set_sigma(vec![1.0; 4]).unwrap();
        let ctx = Context::new(0, 4).unwrap();
        let (next, _) = p
            .reverse_step_with_noise(&ctx, 2, &[3.0, 3.0], &[0.25, -1.5])
            .unwrap();
        assert_eq!(next, vec![0.25, -1.5]);
    }

    #[test]
    fn step_index_checked() {
        let p = policy(4, 2);
        let ctx = Context::new(0, 4).unwrap();
        assert!(matches!(
            p.predict_mean(&[0.0, 0.0], &ctx, 0),
            Err(Error::Index { .. })
        ));
        assert!(matches!(
            p.predict_mean(&[0.0, 0.0], &ctx, 5),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn non_finite_network_output() {
        let mut p = policy(3, 0);
        p.params.0[0] = f64::NAN;
        let ctx = Context::new(0, 4).unwrap();
        let err = p
            .reverse_step_with_noise(&ctx, 1, &[1.0, 1.0], &[0.0, 0.0])
            .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn seeded_steps_replay() {
        let p = policy(6, 3);
        let ctx = Context::new(3, 4).unwrap();
        let key = StreamKey::new(11, Purpose::Rollout, 0);
        let a = p
            .reverse_step(&ctx, 6, &[0.1, 0.2], &mut key.rng(0))
            .unwrap();
        let b = p
            .reverse_step(&ctx, 6, &[0.1, 0.2], &mut key.rng(0))
            .unwrap();
        assert_eq!(a, b);
        let reward = reward_registry("quadrant_binding").unwrap();
        let t1 = p.rollout(&ctx, &reward, &mut key.rng(4)).unwrap();
        let t2 = p.rollout(&ctx, &reward, &mut key.rng(4)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn rollout_structure_and_reward() {
        let p = policy(7, 4);
        let reward = reward_registry("mode_distance").unwrap();
        let ctx = Context::new(2, 4).unwrap();
        let traj = p
            .rollout(
                &ctx,
                &reward,
                &mut StreamKey::new(0, Purpose::Rollout, 0).rng(0),
            )
            .unwrap();
        assert_eq!(traj.states.len(), 8);
        assert_eq!(traj.step_logprobs.len(), 7);
        assert_eq!(traj.reward, reward.evaluate(traj.final_state(), &ctx));
        assert_eq!(traj.sampler_version, p.version);
    }

    #[test]
    fn reward_ignores_intermediate_states() {
        let p = policy(5, 4);
        let reward = reward_registry("composite").unwrap();
        let ctx = Context::new(0, 4).unwrap();
        let mut traj = p
            .rollout(
                &ctx,
                &reward,
                &mut StreamKey::new(1, Purpose::Rollout, 0).rng(0),
            )
            .unwrap();
        let before = reward.evaluate(traj.final_state(), &ctx);
        traj.states[2] = vec![100.0, -100.0];
        assert_eq!(reward.evaluate(traj.final_state(), &ctx), before);
        assert_eq!(before, traj.reward);
    }

    #[test]
    fn single_step_rollout_logprob() {
        let p = policy(1, 5);
        let reward = reward_registry("quadrant_binding").unwrap();
        let ctx = Context::new(1, 4).unwrap();
        let traj = p
            .rollout(
                &ctx,
                &reward,
                &mut StreamKey::new(2, Purpose::Rollout, 0).rng(0),
            )
            .unwrap();
        let mean = p.predict_mean(&traj.states[0], &ctx, 1).unwrap();
        let expected = gaussian_logpdf(&traj.states[1], &mean, p.sigma[0]).unwrap();
        assert_eq!(traj.step_logprobs[0], expected);
    }

    #[test]
    fn recomputed_sum_matches_stored() {
        let p = policy(10, 6);
        let reward = reward_registry("quadrant_binding").unwrap();
        let key = StreamKey::new(3, Purpose::Rollout, 0);
        for i in 0..20 {
            let ctx = Context::new(i % 4, 4).unwrap();
            let traj = p.rollout(&ctx, &reward, &mut key.rng(i as u64)).unwrap();
            let sum = p.trajectory_logprob_sum(&traj).unwrap();
            assert!((sum - traj.stored_logprob_sum()).abs() < 1e-10);
            let (gsum, _) = p.trajectory_logprob_grad(&traj).unwrap();
            assert!((gsum - sum).abs() < 1e-10);
        }
    }

    #[test]
    fn logprob_grad_matches_finite_differences() {
        // T = 2, one-dimensional data
        let schedule = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let mut rng = StreamKey::new(9, Purpose::Check, 0).rng(0);
        let p = DiffusionPolicy::new(schedule, 1, 2, vec![4], None, &mut rng).unwrap();
        let reward = |x: &[f64], _: &Context| x[0].tanh().abs();
        let ctx = Context::new(1, 2).unwrap();
        let traj = p.rollout(&ctx, &reward, &mut rng).unwrap();
        let (_, grad) = p.trajectory_logprob_grad(&traj).unwrap();
        let h = 1e-4;
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.params.0[i] += h;
            minus.params.0[i] -= h;
            let fd = (plus.trajectory_logprob_sum(&traj).unwrap()
                - minus.trajectory_logprob_sum(&traj).unwrap())
                / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn doubling_sigma_by_hand() {
        // Each step: -ln(2 sigma) replaces -ln(sigma) for d coordinates and the
        // quadratic term shrinks by 4, so the change is -T d ln 2 + (3/4) Q.
        let p = policy(4, 7);
        let reward = reward_registry("quadrant_binding").unwrap();
        let ctx = Context::new(2, 4).unwrap();
        let traj = p
            .rollout(
                &ctx,
                &reward,
                &mut StreamKey::new(4, Purpose::Rollout, 0).rng(0),
            )
            .unwrap();
        let mut q = 0.0;
        for i in 0..4 {
            let t = 4 - i;
            let mean = p.predict_mean(&traj.states[i], &ctx, t).unwrap();
            let s = p.sigma[t - 1];
            q += traj.states[i + 1]
                .iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
                / (2.0 * s * s);
        }
        let mut wide = p.clone();
        wide.set_sigma(p.sigma.iter().map(|s| 2.0 * s).collect())
            .unwrap();
        let delta =
            wide.trajectory_logprob_sum(&traj).unwrap() - p.trajectory_logprob_sum(&traj).unwrap();
        let expected = -4.0 * 2.0 * std::f64::consts::LN_2 + 0.75 * q;
        assert!((delta - expected).abs() < 1e-10, "{delta} vs {expected}");
    }

    #[test]
    fn groups_require_shared_snapshot() {
        let p = policy(3, 8);
        let reward = reward_registry("quadrant_binding").unwrap();
        let key = StreamKey::new(0, Purpose::Rollout, 0);
        let a = p
            .rollout(&Context::new(0, 4).unwrap(), &reward, &mut key.rng(0))
            .unwrap();
        let b = p
            .rollout(&Context::new(1, 4).unwrap(), &reward, &mut key.rng(1))
            .unwrap();
        let mut c = a.clone();
        c.sampler_version += 1;
        assert!(TrajectoryGroup::new(vec![a.clone(), a.clone()]).is_ok());
        assert!(TrajectoryGroup::new(vec![a.clone(), b]).is_err());
        assert!(TrajectoryGroup::new(vec![a, c]).is_err());
        assert!(TrajectoryGroup::new(vec![]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = policy(5, 9);
        p.version = 17;
        let mut buf = Vec::new();
        crate::nn::write_checkpoint(&mut buf, &p.to_checkpoint()).unwrap();
        let back =
            DiffusionPolicy::from_checkpoint(crate::nn::read_checkpoint(&buf[..], "mem").unwrap())
                .unwrap();
        assert_eq!(back, p);
    }
}

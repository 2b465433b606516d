//! Score-function gradient estimators over stored trajectories.
//!
//! All estimators return the gradient of the objective being *maximised*;
//! the trainer negates once before handing it to the optimizer. Advantages
//! are raw `reward - baseline`: no standard-deviation normalisation, no KL
//! term and no length normalisation.
//!
//! | kind           | data        | baseline                                   | ratio      |
//! |----------------|-------------|--------------------------------------------|------------|
//! | `Reinforce`    | on-policy   | none                                       | 1          |
//! | `ReinforceBc`  | on-policy   | batch mean reward of the prompt (incl. self) | 1        |
//! | `Rloo`         | on-policy   | leave-one-out mean within the group        | 1          |
//! | `PpoClip`      | off-policy  | caller supplied (running mean per prompt)  | clipped    |
//! | `Loop`         | off-policy  | leave-one-out mean within the group        | clipped    |

use std::fmt;
use std::str::FromStr;

use crate::diffusion::{DiffusionPolicy, Trajectory, TrajectoryGroup};
use crate::{Error, Result};

/// Log-ratio magnitude beyond which the importance ratio is saturated.
pub const LOG_RATIO_LIMIT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Reinforce,
    ReinforceBc,
    Rloo,
    PpoClip,
    Loop,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Reinforce,
        EstimatorKind::ReinforceBc,
        EstimatorKind::Rloo,
        EstimatorKind::PpoClip,
        EstimatorKind::Loop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Reinforce => "reinforce",
            EstimatorKind::ReinforceBc => "reinforce_bc",
            EstimatorKind::Rloo => "rloo",
            EstimatorKind::PpoClip => "ppo_clip",
            EstimatorKind::Loop => "loop",
        }
    }

    /// REINFORCE-family estimators may only see rollouts from the current parameters.
    pub fn is_on_policy(self) -> bool {
        matches!(
            self,
            EstimatorKind::Reinforce | EstimatorKind::ReinforceBc | EstimatorKind::Rloo
        )
    }

    pub fn is_clipped(self) -> bool {
        !self.is_on_policy()
    }

    /// Whether the estimator needs `K >= 2` trajectories per prompt.
    pub fn needs_groups(self) -> bool {
        matches!(
            self,
            EstimatorKind::ReinforceBc | EstimatorKind::Rloo | EstimatorKind::Loop
        )
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "ppo" | "ddpo" => "ppo_clip",
            "reinforce_baseline" => "reinforce_bc",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::Lookup {
                name: s.to_string(),
                valid: Self::ALL.iter().map(|k| k.name().to_string()).collect(),
            })
    }
}

/// Which clipped surrogate to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurrogateForm {
    /// `clip(rho, 1 - eps, 1 + eps) * A`, the diffusion fine-tuning objective.
    #[default]
    ClippedRatio,
    /// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`, the classic PPO form.
    PessimisticMin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    epsilon: f64,
    pub form: SurrogateForm,
}

impl ClipConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!(
                "clip epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(Self {
            epsilon,
            form: SurrogateForm::default(),
        })
    }

    /// Importance sampling with no clipping (epsilon = infinity). Only the
    /// overflow guard remains.
    pub fn unclipped() -> Self {
        Self {
            epsilon: f64::INFINITY,
            form: SurrogateForm::default(),
        }
    }

    pub fn with_form(mut self, form: SurrogateForm) -> Self {
        self.form = form;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_unclipped(&self) -> bool {
        self.epsilon.is_infinite()
    }

    fn contains(&self, ratio: f64) -> bool {
        (1.0 - self.epsilon..=1.0 + self.epsilon).contains(&ratio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageRecord {
    pub raw_reward: f64,
    pub baseline: f64,
    pub advantage: f64,
}

impl AdvantageRecord {
    pub fn new(raw_reward: f64, baseline: f64) -> Self {
        Self {
            raw_reward,
            baseline,
            advantage: raw_reward - baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub kind: EstimatorKind,
    /// Trajectories per prompt group (1 for per-trajectory estimators).
    pub k_used: usize,
    /// Fraction of transitions whose clip was active (zero gradient). Always
    /// 0 for on-policy kinds.
    pub clip_active_fraction: f64,
    /// Value of the surrogate whose gradient `grad` is.
    pub surrogate_value: f64,
    /// Transitions whose log-ratio hit the overflow guard.
    pub saturated_steps: usize,
}

/// Mean reward of every other member: `(1 / (K - 1)) sum_{j != i} r_j`.
pub fn loo_baseline(rewards: &[f64], i: usize) -> Result<f64> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "leave-one-out baseline needs K >= 2, got {k}"
        )));
    }
    if i >= k {
        return Err(Error::Config(format!(
            "member index {i} out of range for K = {k}"
        )));
    }
    let others: f64 = rewards
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, r)| r)
        .sum();
    Ok(others / (k - 1) as f64)
}

pub fn loo_advantages(rewards: &[f64]) -> Result<Vec<AdvantageRecord>> {
    (0..rewards.len())
        .map(|i| Ok(AdvantageRecord::new(rewards[i], loo_baseline(rewards, i)?)))
        .collect()
}

/// Result of evaluating `pi_new / pi_old` in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    /// The log-ratio exceeded [`LOG_RATIO_LIMIT`] and was capped.
    pub saturated: bool,
}

pub fn importance_ratio(logp_new: f64, logp_old: f64) -> Ratio {
    let diff = logp_new - logp_old;
    if diff.abs() > LOG_RATIO_LIMIT {
        Ratio {
            value: LOG_RATIO_LIMIT.copysign(diff).exp(),
            saturated: true,
        }
    } else {
        Ratio {
            value: diff.exp(),
            saturated: false,
        }
    }
}

pub fn clip_ratio(r: f64, cfg: &ClipConfig) -> f64 {
    r.max(1.0 - cfg.epsilon).min(1.0 + cfg.epsilon)
}

/// Per-prompt exponential running mean of rewards, used as the PPO baseline.
/// A prompt with no history has baseline 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBaseline {
    decay: f64,
    values: Vec<Option<f64>>,
}

impl PromptBaseline {
    pub const DEFAULT_DECAY: f64 = 0.9;

    pub fn new(num_contexts: usize, decay: f64) -> Self {
        Self {
            decay,
            values: vec![None; num_contexts],
        }
    }

    pub fn value(&self, context_id: usize) -> f64 {
        self.values[context_id].unwrap_or(0.0)
    }

    /// Folds in the mean reward each prompt received in `trajs`.
    pub fn update<'a>(&mut self, trajs: impl IntoIterator<Item = &'a Trajectory>) {
        let mut sums = vec![(0.0, 0usize); self.values.len()];
        for t in trajs {
            let e = &mut sums[t.context.id()];
            e.0 += t.reward;
            e.1 += 1;
        }
        for (slot, (sum, n)) in self.values.iter_mut().zip(sums) {
            if n > 0 {
                let mean = sum / n as f64;
                *slot = Some(match *slot {
                    Some(prev) => self.decay * prev + (1.0 - self.decay) * mean,
                    None => mean,
                });
            }
        }
    }
}

/// Per-member advantages against the batch-mean reward of the same prompt,
/// the member itself included.
pub fn batch_mean_advantages(groups: &[TrajectoryGroup]) -> Vec<Vec<AdvantageRecord>> {
    let n_ctx = groups.first().map_or(0, |g| g.context().num_contexts());
    let mut sums = vec![(0.0, 0usize); n_ctx];
    for m in groups.iter().flat_map(|g| g.members()) {
        let e = &mut sums[m.context.id()];
        e.0 += m.reward;
        e.1 += 1;
    }
    groups
        .iter()
        .map(|g| {
            let (sum, n) = sums[g.context().id()];
            let mean = sum / n as f64;
            g.rewards()
                .iter()
                .map(|&r| AdvantageRecord::new(r, mean))
                .collect()
        })
        .collect()
}

/// One trajectory's contribution: its advantage and its weight in the batch average.
struct Term<'a> {
    traj: &'a Trajectory,
    advantage: f64,
    weight: f64,
}

fn check_fresh(policy: &DiffusionPolicy, traj: &Trajectory) -> Result<()> {
    if traj.sampler_version != policy.version {
        return Err(Error::Staleness {
            sampled: traj.sampler_version,
            current: policy.version,
        });
    }
    Ok(())
}

fn check_stored(policy: &DiffusionPolicy, traj: &Trajectory) -> Result<()> {
    if traj.step_logprobs.len() != policy.steps() {
        return Err(Error::Contract(format!(
            "trajectory stores {} sampling log-probs, policy has {} steps",
            traj.step_logprobs.len(),
            policy.steps()
        )));
    }
    Ok(())
}

fn check_groups(groups: &[TrajectoryGroup]) -> Result<usize> {
    if groups.is_empty() {
        return Err(Error::Config("no trajectory groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.k() < 2) {
        return Err(Error::Config(format!(
            "group for context {} has K = {}; leave-one-out needs K >= 2",
            g.context().id(),
            g.k()
        )));
    }
    Ok(groups.iter().map(|g| g.k()).max().unwrap_or(0))
}

/// Group-mean then batch-mean weights.
fn group_terms<'a>(
    groups: &'a [TrajectoryGroup],
    advantages: &[Vec<AdvantageRecord>],
) -> Vec<Term<'a>> {
    let g = groups.len() as f64;
    groups
        .iter()
        .zip(advantages)
        .flat_map(|(group, adv)| {
            let k = group.k() as f64;
            group.members().iter().zip(adv).map(move |(traj, a)| Term {
                traj,
                advantage: a.advantage,
                weight: 1.0 / (k * g),
            })
        })
        .collect()
}

fn on_policy(
    policy: &DiffusionPolicy,
    terms: &[Term<'_>],
    kind: EstimatorKind,
    k_used: usize,
) -> Result<GradientEstimate> {
    for term in terms {
        check_fresh(policy, term.traj)?;
    }
    let mut grad = vec![0.0; policy.params.len()];
    let mut surrogate = 0.0;
    for term in terms {
        let coef = term.weight * term.advantage;
        surrogate += coef * term.traj.steps() as f64;
        if coef != 0.0 {
            policy.accumulate_weighted_score(term.traj, |_, _| coef, &mut grad)?;
        }
    }
    Ok(GradientEstimate {
        grad,
        kind,
        k_used,
        clip_active_fraction: 0.0,
        surrogate_value: surrogate,
        saturated_steps: 0,
    })
}

fn clipped(
    policy: &DiffusionPolicy,
    terms: &[Term<'_>],
    cfg: &ClipConfig,
    kind: EstimatorKind,
    k_used: usize,
) -> Result<GradientEstimate> {
    for term in terms {
        check_stored(policy, term.traj)?;
    }
    let mut grad = vec![0.0; policy.params.len()];
    let mut surrogate = 0.0;
    let mut active = 0usize;
    let mut saturated = 0usize;
    let mut total = 0usize;
    for term in terms {
        let adv = term.advantage;
        let old = &term.traj.step_logprobs;
        let mut value = 0.0;
        // d/dtheta of rho * A is rho * A * grad log pi_new
        policy.accumulate_weighted_score(
            term.traj,
            |i, logp_new| {
                total += 1;
                let ratio = importance_ratio(logp_new, old[i]);
                let rho = ratio.value;
                let clipped = clip_ratio(rho, cfg);
                let (step_value, live) = match cfg.form {
                    SurrogateForm::ClippedRatio => (clipped * adv, cfg.contains(rho)),
                    SurrogateForm::PessimisticMin => {
                        let (raw, cut) = (rho * adv, clipped * adv);
                        if raw <= cut {
                            (raw, true)
                        } else {
                            (cut, false)
                        }
                    }
                };
                value += step_value;
                if !live {
                    active += 1;
                }
                if ratio.saturated {
                    saturated += 1;
                }
                if live && !ratio.saturated {
                    term.weight * rho * adv
                } else {
                    0.0
                }
            },
            &mut grad,
        )?;
        surrogate += term.weight * value;
    }
    Ok(GradientEstimate {
        grad,
        kind,
        k_used,
        clip_active_fraction: if total == 0 {
            0.0
        } else {
            active as f64 / total as f64
        },
        surrogate_value: surrogate,
        saturated_steps: saturated,
    })
}

/// Mean over trajectories of `r * sum_t grad log p_t`.
pub fn reinforce_grad(policy: &DiffusionPolicy, trajs: &[Trajectory]) -> Result<GradientEstimate> {
    let baselines = vec![0.0; trajs.len()];
    let mut est = baseline_corrected_grad(policy, trajs, &baselines)?;
    est.kind = EstimatorKind::Reinforce;
    Ok(est)
}

/// On-policy REINFORCE with an explicit per-trajectory baseline.
pub fn baseline_corrected_grad(
    policy: &DiffusionPolicy,
    trajs: &[Trajectory],
    baselines: &[f64],
) -> Result<GradientEstimate> {
    if trajs.is_empty() {
        return Err(Error::Config("no trajectories".into()));
    }
    check_len(trajs.len(), baselines.len())?;
    let w = 1.0 / trajs.len() as f64;
    let terms: Vec<Term<'_>> = trajs
        .iter()
        .zip(baselines)
        .map(|(traj, b)| Term {
            traj,
            advantage: traj.reward - b,
            weight: w,
        })
        .collect();
    on_policy(policy, &terms, EstimatorKind::ReinforceBc, 1)
}

/// REINFORCE with the per-prompt batch-mean baseline (self included).
pub fn reinforce_bc_grad(
    policy: &DiffusionPolicy,
    groups: &[TrajectoryGroup],
) -> Result<GradientEstimate> {
    let k = check_groups(groups)?;
    let adv = batch_mean_advantages(groups);
    on_policy(
        policy,
        &group_terms(groups, &adv),
        EstimatorKind::ReinforceBc,
        k,
    )
}

/// REINFORCE with leave-one-out baselines inside each group.
pub fn rloo_grad(policy: &DiffusionPolicy, groups: &[TrajectoryGroup]) -> Result<GradientEstimate> {
    let k = check_groups(groups)?;
    let adv = groups
        .iter()
        .map(|g| loo_advantages(&g.rewards()))
        .collect::<Result<Vec<_>>>()?;
    on_policy(policy, &group_terms(groups, &adv), EstimatorKind::Rloo, k)
}

/// Clipped importance-sampled surrogate over single trajectories, averaged.
/// `baselines[i]` is subtracted from trajectory `i`'s reward.
pub fn ppo_surrogate_grad(
    policy: &DiffusionPolicy,
    old_trajs: &[Trajectory],
    baselines: &[f64],
    cfg: &ClipConfig,
) -> Result<GradientEstimate> {
    if old_trajs.is_empty() {
        return Err(Error::Config("no trajectories".into()));
    }
    check_len(old_trajs.len(), baselines.len())?;
    let w = 1.0 / old_trajs.len() as f64;
    let terms: Vec<Term<'_>> = old_trajs
        .iter()
        .zip(baselines)
        .map(|(traj, b)| Term {
            traj,
            advantage: traj.reward - b,
            weight: w,
        })
        .collect();
    clipped(policy, &terms, cfg, EstimatorKind::PpoClip, 1)
}

/// LOOP: per group, `(1/K) sum_i sum_t clip(rho^i_t) (r^i - b^i)` with
/// leave-one-out `b^i`; averaged over groups.
pub fn loop_surrogate_grad(
    policy: &DiffusionPolicy,
    old_groups: &[TrajectoryGroup],
    cfg: &ClipConfig,
) -> Result<GradientEstimate> {
    let k = check_groups(old_groups)?;
    let adv = old_groups
        .iter()
        .map(|g| loo_advantages(&g.rewards()))
        .collect::<Result<Vec<_>>>()?;
    clipped(
        policy,
        &group_terms(old_groups, &adv),
        cfg,
        EstimatorKind::Loop,
        k,
    )
}

fn check_len(trajs: usize, baselines: usize) -> Result<()> {
    if trajs != baselines {
        return Err(Error::Shape {
            what: "baselines",
            expected: trajs,
            got: baselines,
        });
    }
    Ok(())
}

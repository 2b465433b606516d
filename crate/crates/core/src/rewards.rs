//! Prompt-conditioned terminal rewards on 2-D samples.
//!
//! `quadrant_binding` is a 0/1 "did the sample land where the prompt asked"
//! score; `mode_distance` is a smooth Gaussian bump around the prompted
//! mode centre. Both lie in `[0, 1]`.

use crate::diffusion::Context;
use crate::{Error, Result};

/// Anything that scores a final sample under a prompt.
pub trait RewardFn: Sync {
    fn reward(&self, x0: &[f64], context: &Context) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&[f64], &Context) -> f64 + Sync,
{
    fn reward(&self, x0: &[f64], context: &Context) -> f64 {
        self(x0, context)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    QuadrantBinding,
    ModeDistance,
    /// Mean of the two above.
    Composite,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [
        RewardKind::QuadrantBinding,
        RewardKind::ModeDistance,
        RewardKind::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::QuadrantBinding => "quadrant_binding",
            RewardKind::ModeDistance => "mode_distance",
            RewardKind::Composite => "composite",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    kind: RewardKind,
    mode_centers: Vec<[f64; 2]>,
    bandwidth: f64,
}

/// Mode centres of the default mixture, indexed like the quadrants.
pub const DEFAULT_CENTERS: [[f64; 2]; 4] = [[1.5, 1.5], [-1.5, 1.5], [-1.5, -1.5], [1.5, -1.5]];
pub const DEFAULT_BANDWIDTH: f64 = 1.0;

impl RewardSpec {
    pub fn new(kind: RewardKind, mode_centers: Vec<[f64; 2]>, bandwidth: f64) -> Result<Self> {
        if mode_centers.len() < 2 {
            return Err(Error::Config(
                "reward needs at least two mode centres".into(),
            ));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        for (i, a) in mode_centers.iter().enumerate() {
            if mode_centers[..i].contains(a) {
                return Err(Error::Config(format!("duplicate mode centre {a:?}")));
            }
        }
        if kind != RewardKind::ModeDistance && mode_centers.len() != 4 {
            return Err(Error::Config(format!(
                "{} reward needs exactly 4 contexts, got {}",
                kind.name(),
                mode_centers.len()
            )));
        }
        Ok(Self {
            kind,
            mode_centers,
            bandwidth,
        })
    }

    pub fn default_for(kind: RewardKind) -> Self {
        Self::new(kind, DEFAULT_CENTERS.to_vec(), DEFAULT_BANDWIDTH).expect("defaults are valid")
    }

    pub fn kind(&self) -> RewardKind {
        self.kind
    }

    pub fn num_contexts(&self) -> usize {
        self.mode_centers.len()
    }

    pub fn mode_centers(&self) -> &[[f64; 2]] {
        &self.mode_centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

/// 1 when `x0` is strictly inside the quadrant named by the context
/// (0: +x+y, 1: -x+y, 2: -x-y, 3: +x-y), else 0. Points on an axis score 0.
pub fn quadrant_reward(x0: &[f64], context: &Context) -> f64 {
    let (x, y) = (x0[0], x0[1]);
    let inside = match context.id() {
        0 => x > 0.0 && y > 0.0,
        1 => x < 0.0 && y > 0.0,
        2 => x < 0.0 && y < 0.0,
        3 => x > 0.0 && y < 0.0,
        _ => false,
    };
    if inside {
        1.0
    } else {
        0.0
    }
}

/// `exp(-|x0 - centre|^2 / bandwidth^2)` for the prompted centre.
pub fn mode_distance_reward(x0: &[f64], context: &Context, spec: &RewardSpec) -> f64 {
    let c = spec.mode_centers[context.id()];
    let d2: f64 = x0.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (spec.bandwidth * spec.bandwidth)).exp()
}

/// A reward resolved by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Reward {
    spec: RewardSpec,
}

impl Reward {
    pub fn new(spec: RewardSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn evaluate(&self, x0: &[f64], context: &Context) -> f64 {
        match self.spec.kind {
            RewardKind::QuadrantBinding => quadrant_reward(x0, context),
            RewardKind::ModeDistance => mode_distance_reward(x0, context, &self.spec),
            RewardKind::Composite => {
                0.5 * (quadrant_reward(x0, context) + mode_distance_reward(x0, context, &self.spec))
            }
        }
    }
}

impl RewardFn for Reward {
    fn reward(&self, x0: &[f64], context: &Context) -> f64 {
        self.evaluate(x0, context)
    }
}

pub fn reward_registry(name: &str) -> Result<Reward> {
    RewardKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .map(|k| Reward::new(RewardSpec::default_for(k)))
        .ok_or_else(|| Error::Lookup {
            name: name.to_string(),
            valid: RewardKind::ALL
                .iter()
                .map(|k| k.name().to_string())
                .collect(),
        })
}

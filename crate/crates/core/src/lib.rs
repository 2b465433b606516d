//! Policy-gradient estimators for fine-tuning a denoising diffusion model
//! with a terminal reward: REINFORCE, REINFORCE with a per-prompt baseline,
//! RLOO, clipped importance-sampled PPO, and LOOP (K trajectories per
//! prompt with leave-one-out baselines inside the clipped surrogate).
//!
//! Everything runs on a small tanh MLP mean predictor over 2-D data, so the
//! estimators can be checked against finite differences and Monte Carlo.

pub mod diffusion;
mod error;
pub mod estimators;
pub mod gradcheck;
pub mod nn;
pub mod rewards;
pub mod rng;
pub mod trainer;

pub use diffusion::{Context, DiffusionPolicy, NoiseSchedule, Trajectory, TrajectoryGroup};
pub use error::{Error, Result};
pub use estimators::{ClipConfig, EstimatorKind, GradientEstimate};
pub use nn::{AdamWConfig, AdamWState, MlpSpec, ParamVector};
pub use rewards::{reward_registry, Reward, RewardFn};
pub use trainer::TrainConfig;

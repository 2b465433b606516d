//! Toy conditional denoising diffusion model over 2-D points, viewed as a
//! `T`-step stochastic policy whose only reward arrives at `x_0`.

mod dataset;
mod policy;
mod pretrain;
mod schedule;

pub use dataset::{mixture_dataset, read_dataset, write_dataset, MixtureConfig, Sample};
pub use policy::{gaussian_logpdf, Context, DiffusionPolicy, Trajectory, TrajectoryGroup};
pub use pretrain::{pretrain_ddpm, PretrainConfig};
pub use schedule::NoiseSchedule;

pub const DATA_DIM: usize = 2;

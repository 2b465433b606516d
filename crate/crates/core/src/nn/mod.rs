//! Dense tanh network with hand-written reverse mode, AdamW and norm clipping.
//!
//! This is the only differentiable code in the crate. Everything is `f64`.

mod adamw;
mod checkpoint;
mod clip;
mod mlp;

pub use adamw::{AdamWConfig, AdamWState};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use clip::{clip_grad_norm, l2_norm};
pub use mlp::{
    mlp_backward, mlp_backward_into, mlp_forward, Activation, Backward, LayerParams, MlpSpec,
    ParamVector, Tape,
};

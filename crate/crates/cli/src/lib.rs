//! The `looprl` command line: argument and config-file handling plus the
//! subcommands. `main` only maps the result to an exit code.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::compare_variants;
pub use config::{CliConfig, KEYS, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config file contents or settings.
    Config(String),
    Io(String),
    /// A check ran and failed, or training hit a numeric/contract error.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Check(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<looprl_core::Error> for CliError {
    fn from(e: looprl_core::Error) -> Self {
        use looprl_core::Error as E;
        match e {
            E::Config(_) | E::Lookup { .. } => CliError::Config(e.to_string()),
            E::Io { .. } | E::Parse { .. } => CliError::Io(e.to_string()),
            _ => CliError::Check(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "looprl",
    args_override_self = true,
    version,
    about = "Policy-gradient estimators (REINFORCE, RLOO, PPO, LOOP) on a toy 2-D diffusion policy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum CommandKind {
    Pretrain,
    Finetune,
    VarianceStudy,
    Gradcheck,
    Compare,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the base diffusion policy on the 4-mode mixture.
    Pretrain(Flags),
    /// Pretrain (or load --base) and fine-tune with the configured estimator.
    Finetune(Flags),
    /// Gradient covariance trace of PPO (K=1) and LOOP (K>=2) at a frozen policy.
    VarianceStudy(Flags),
    /// Finite-difference checks of the network and trajectory gradients.
    Gradcheck(Flags),
    /// REINFORCE, REINFORCE_BC, PPO and LOOP on shared base policies, one CSV.
    Compare(Flags),
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Pretrain(_) => CommandKind::Pretrain,
            Command::Finetune(_) => CommandKind::Finetune,
            Command::VarianceStudy(_) => CommandKind::VarianceStudy,
            Command::Gradcheck(_) => CommandKind::Gradcheck,
            Command::Compare(_) => CommandKind::Compare,
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Pretrain(f)
            | Command::Finetune(f)
            | Command::VarianceStudy(f)
            | Command::Gradcheck(f)
            | Command::Compare(f) => f,
        }
    }
}

/// Flags mirror the config-file keys. Values are kept as text and parsed by
/// the same code as the file, so both report errors the same way.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (created if missing).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<String>,
    /// Write 0 in the wallclock column so output is byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// Negate the analytic gradient in gradcheck (mutation test hook).
    #[arg(long, hide = true)]
    pub flip_sign: bool,

    #[arg(long)]
    pub estimator: Option<String>,
    /// Trajectories per prompt group.
    #[arg(long)]
    pub k: Option<String>,
    /// Clip half-width; `inf` disables clipping.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// `clip` (clipped ratio) or `min` (pessimistic minimum).
    #[arg(long)]
    pub surrogate: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub groups_per_epoch: Option<String>,
    #[arg(long)]
    pub inner_epochs: Option<String>,
    #[arg(long)]
    pub minibatch_groups: Option<String>,
    /// Defaults to $LOOP_RL_SEED, else 0.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub max_grad_norm: Option<String>,
    /// quadrant_binding, mode_distance or composite.
    #[arg(long)]
    pub reward: Option<String>,
    /// Diffusion steps T.
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub beta_start: Option<String>,
    #[arg(long)]
    pub beta_end: Option<String>,
    /// Hidden widths, e.g. `32,32`.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub pretrain_steps: Option<String>,
    #[arg(long)]
    pub pretrain_batch: Option<String>,
    #[arg(long)]
    pub pretrain_lr: Option<String>,
    #[arg(long)]
    pub dataset_size: Option<String>,
    /// Fraction of mixture samples drawn from their prompt's own mode.
    #[arg(long)]
    pub binding: Option<String>,
    #[arg(long)]
    pub validation_per_prompt: Option<String>,
    /// compare: number of seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<String>,
    /// compare: LOOP group sizes, e.g. `2,4`.
    #[arg(long)]
    pub loop_ks: Option<String>,
    /// variance-study: group sizes, e.g. `1,2,4,8`.
    #[arg(long)]
    pub ks: Option<String>,
    /// variance-study: fresh buffers per K.
    #[arg(long)]
    pub resamples: Option<String>,
    /// variance-study: prompt groups per buffer (0 = one per prompt).
    #[arg(long)]
    pub probe_groups: Option<String>,
    /// Start from this checkpoint instead of pretraining.
    #[arg(long, value_name = "CKPT")]
    pub base: Option<String>,
    /// gradcheck: seeded cases per suite.
    #[arg(long)]
    pub cases: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("out_dir", &self.out_dir),
            ("estimator", &self.estimator),
            ("k", &self.k),
            ("epsilon", &self.epsilon),
            ("surrogate", &self.surrogate),
            ("epochs", &self.epochs),
            ("groups_per_epoch", &self.groups_per_epoch),
            ("inner_epochs", &self.inner_epochs),
            ("minibatch_groups", &self.minibatch_groups),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("max_grad_norm", &self.max_grad_norm),
            ("reward", &self.reward),
            ("steps", &self.steps),
            ("beta_start", &self.beta_start),
            ("beta_end", &self.beta_end),
            ("hidden", &self.hidden),
            ("pretrain_steps", &self.pretrain_steps),
            ("pretrain_batch", &self.pretrain_batch),
            ("pretrain_lr", &self.pretrain_lr),
            ("dataset_size", &self.dataset_size),
            ("binding", &self.binding),
            ("validation_per_prompt", &self.validation_per_prompt),
            ("seeds", &self.seeds),
            ("loop_ks", &self.loop_ks),
            ("ks", &self.ks),
            ("resamples", &self.resamples),
            ("probe_groups", &self.probe_groups),
            ("base", &self.base),
            ("cases", &self.cases),
        ]
    }
}

/// Defaults, then `$LOOP_RL_SEED`, then the config file, then flags.
pub fn resolve_config(flags: &Flags) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::from_env()?;
    if let Some(path) = &flags.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in flags.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if flags.no_timing {
        cfg.timing = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code; diagnostics go to stderr, summaries to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = resolve_config(cli.command.flags())
        .and_then(|cfg| commands::dispatch(cli.command.kind(), &cfg, cli.command.flags()));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("looprl: {e}");
            e.exit_code()
        }
    }
}

//! Layered configuration: defaults, then an optional `key = value` file, then flags.

use std::path::{Path, PathBuf};

use looprl_core::estimators::SurrogateForm;
use looprl_core::{EstimatorKind, TrainConfig};

use crate::CliError;

pub const SEED_ENV: &str = "LOOP_RL_SEED";

/// Everything a subcommand needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    /// Number of consecutive seeds `compare` runs, starting at `train.seed`.
    pub seeds: usize,
    /// LOOP group sizes `compare` includes next to the baselines.
    pub loop_ks: Vec<usize>,
    /// Group sizes swept by `variance-study` (1 means PPO).
    pub ks: Vec<usize>,
    pub resamples: usize,
    /// Prompt groups per probe resample; 0 means one per prompt.
    pub probe_groups: usize,
    /// Start from this checkpoint instead of pretraining.
    pub base: Option<PathBuf>,
    /// Seeded cases per gradcheck suite.
    pub cases: u64,
    pub timing: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            out_dir: PathBuf::from("out"),
            seeds: 5,
            loop_ks: vec![2, 4],
            ks: vec![1, 2, 4, 8],
            resamples: 1000,
            probe_groups: 0,
            base: None,
            cases: 10,
            timing: true,
        }
    }
}

/// Every key accepted in a config file, with the flag spelling `--key-name`.
pub const KEYS: &[(&str, &str)] = &[
    (
        "estimator",
        "one of reinforce, reinforce_bc, rloo, ppo_clip, loop",
    ),
    ("k", "a positive integer"),
    ("epsilon", "a number in (0, 1), or inf"),
    ("surrogate", "clip or min"),
    ("epochs", "a non-negative integer"),
    ("groups_per_epoch", "a positive integer"),
    ("inner_epochs", "a positive integer"),
    ("minibatch_groups", "a positive integer"),
    ("seed", "a non-negative integer"),
    ("lr", "a number"),
    ("weight_decay", "a number"),
    ("max_grad_norm", "a number"),
    ("reward", "a reward name"),
    ("steps", "a positive integer"),
    ("beta_start", "a number"),
    ("beta_end", "a number"),
    ("hidden", "comma-separated positive integers"),
    ("pretrain_steps", "a non-negative integer"),
    ("pretrain_batch", "a positive integer"),
    ("pretrain_lr", "a number"),
    ("dataset_size", "a positive integer"),
    ("binding", "a number in [0, 1]"),
    ("validation_per_prompt", "a positive integer"),
    ("out_dir", "a path"),
    ("seeds", "a positive integer"),
    ("loop_ks", "comma-separated integers >= 2"),
    ("ks", "comma-separated positive integers"),
    ("resamples", "an integer >= 100"),
    ("probe_groups", "a non-negative integer"),
    ("base", "a checkpoint path"),
    ("cases", "a positive integer"),
    ("timing", "true or false"),
];

fn normalise(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

fn unknown(key: &str) -> CliError {
    let valid: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
    CliError::Config(format!(
        "unknown key '{key}'; valid keys: {}",
        valid.join(", ")
    ))
}

fn invalid(key: &str, value: &str) -> CliError {
    let expected = KEYS.iter().find(|(k, _)| *k == key).map_or("?", |(_, t)| t);
    CliError::Config(format!(
        "invalid value '{value}' for '{key}': expected {expected}"
    ))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| invalid(key, value))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| num(key, s))
        .collect()
}

impl CliConfig {
    /// Defaults with the `LOOP_RL_SEED` override applied.
    pub fn from_env() -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.train.seed = seed.trim().parse().map_err(|_| {
                CliError::Config(format!("{SEED_ENV}='{seed}' is not a non-negative integer"))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = normalise(key);
        let k = key.as_str();
        let t = &mut self.train;
        let v = value.trim();
        match k {
            "estimator" => {
                t.estimator = v.parse::<EstimatorKind>().map_err(|_| invalid(k, value))?
            }
            "k" => t.k = num(k, v)?,
            "epsilon" => t.epsilon = num(k, v)?,
            "surrogate" => {
                t.surrogate = match v {
                    "clip" | "clipped_ratio" => SurrogateForm::ClippedRatio,
                    "min" | "pessimistic_min" => SurrogateForm::PessimisticMin,
                    _ => return Err(invalid(k, value)),
                }
            }
            "epochs" => t.epochs = num(k, v)?,
            "groups_per_epoch" => t.groups_per_epoch = num(k, v)?,
            "inner_epochs" => t.inner_epochs = num(k, v)?,
            "minibatch_groups" => t.minibatch_groups = num(k, v)?,
            "seed" => t.seed = num(k, v)?,
            "lr" => t.lr = num(k, v)?,
            "weight_decay" => t.weight_decay = num(k, v)?,
            "max_grad_norm" => t.max_grad_norm = num(k, v)?,
            "reward" | "reward_name" => t.reward_name = v.to_string(),
            "steps" => t.steps = num(k, v)?,
            "beta_start" => t.beta_start = num(k, v)?,
            "beta_end" => t.beta_end = num(k, v)?,
            "hidden" => t.hidden = list(k, v)?,
            "pretrain_steps" => t.pretrain_steps = num(k, v)?,
            "pretrain_batch" => t.pretrain_batch = num(k, v)?,
            "pretrain_lr" => t.pretrain_lr = num(k, v)?,
            "dataset_size" => t.dataset_size = num(k, v)?,
            "binding" => t.binding = num(k, v)?,
            "validation_per_prompt" => t.validation_per_prompt = num(k, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seeds" => self.seeds = num(k, v)?,
            "loop_ks" => self.loop_ks = list(k, v)?,
            "ks" => self.ks = list(k, v)?,
            "resamples" => self.resamples = num(k, v)?,
            "probe_groups" => self.probe_groups = num(k, v)?,
            "base" => self.base = Some(PathBuf::from(v)),
            "cases" => self.cases = num(k, v)?,
            "timing" => self.timing = num(k, v)?,
            _ => return Err(unknown(k)),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file. `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str, source: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{source}:{}: expected 'key = value', got '{line}'",
                    n + 1
                ))
            })?;
            self.set(key, value).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{source}:{}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Io(format!("cannot read config file {}: {e}", path.display()))
        })?;
        self.apply_file_text(&text, &path.display().to_string())
    }

    /// Checks the combination, not just individual values.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.seeds == 0 {
            return Err(CliError::Config("seeds must be >= 1".into()));
        }
        if self.loop_ks.iter().any(|&k| k < 2) {
            return Err(CliError::Config("loop_ks entries must be >= 2".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(CliError::Config(
                "ks must be a non-empty list of positive integers".into(),
            ));
        }
        if self.cases == 0 {
            return Err(CliError::Config("cases must be >= 1".into()));
        }
        Ok(())
    }
}

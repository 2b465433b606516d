use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use looprl_core::diffusion::{mixture_dataset, write_dataset, DiffusionPolicy};
use looprl_core::gradcheck::{run_gradcheck, GradcheckOptions};
use looprl_core::nn::{load_checkpoint, save_checkpoint};
use looprl_core::rewards::reward_registry;
use looprl_core::trainer::{
    compare_runs, evaluate_policy, pretrain_base, run_experiment, variance_sweep,
    write_metrics_csv, write_variance_csv, MetricsRow,
};
use looprl_core::{EstimatorKind, TrainConfig};

use crate::{CliConfig, CliError, CommandKind, Flags};

pub(crate) fn dispatch(kind: CommandKind, cfg: &CliConfig, flags: &Flags) -> Result<(), CliError> {
    match kind {
        CommandKind::Pretrain => pretrain(cfg),
        CommandKind::Finetune => finetune(cfg),
        CommandKind::VarianceStudy => variance_study(cfg),
        CommandKind::Gradcheck => gradcheck(cfg, flags.flip_sign),
        CommandKind::Compare => compare(cfg),
    }
}

fn out_dir(cfg: &CliConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    Ok(&cfg.out_dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("writing {}: {e}", path.display()))
}

/// The base policy: `--base` if given, else pretrained from the config.
fn base_policy(cfg: &CliConfig) -> Result<DiffusionPolicy, CliError> {
    match &cfg.base {
        Some(path) => {
            let policy = DiffusionPolicy::from_checkpoint(load_checkpoint(path)?)?;
            println!("loaded base policy from {}", path.display());
            Ok(policy)
        }
        None => {
            let (policy, trace) = pretrain_base(&cfg.train)?;
            if let Some(last) = trace.last() {
                println!("pretrained {} steps, final loss {last:.5}", trace.len());
            }
            Ok(policy)
        }
    }
}

fn pretrain(cfg: &CliConfig) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let train = &cfg.train;
    let data = mixture_dataset(train.dataset_size, train.seed, &train.mixture());
    write_dataset(&dir.join("dataset.txt"), &data)?;
    let (policy, trace) = pretrain_base(train)?;

    let loss_path = dir.join("pretrain_loss.csv");
    let mut w = create(&loss_path)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for (i, l) in trace.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(&loss_path))?;
    let ckpt = dir.join("base.ckpt");
    save_checkpoint(&ckpt, &policy.to_checkpoint())?;

    let reward = reward_registry(&train.reward_name)?;
    let score = evaluate_policy(&policy, &reward, train.validation_per_prompt, train.seed)?;
    println!(
        "pretrained {} steps, final loss {:.5}; {} reward {score:.4}; wrote {}",
        trace.len(),
        trace.last().copied().unwrap_or(f64::NAN),
        train.reward_name,
        ckpt.display()
    );
    Ok(())
}

fn finetune(cfg: &CliConfig) -> Result<(), CliError> {
    let dir = out_dir(cfg)?.to_path_buf();
    let base = base_policy(cfg)?;
    let outcome = run_experiment(&cfg.train, Some(&base), cfg.timing)?;
    outcome.write(&dir)?;
    println!(
        "{}: validation reward {:.4} -> {:.4} over {} epochs; wrote {}",
        cfg.train.run_id(),
        outcome.base_validation,
        outcome.final_validation,
        outcome.rows.len(),
        dir.join("metrics.csv").display()
    );
    Ok(())
}

fn variance_study(cfg: &CliConfig) -> Result<(), CliError> {
    let dir = out_dir(cfg)?.to_path_buf();
    let policy = base_policy(cfg)?;
    let groups = if cfg.probe_groups == 0 {
        policy.num_contexts()
    } else {
        cfg.probe_groups
    };
    let report = variance_sweep(&policy, &cfg.train, &cfg.ks, groups, cfg.resamples)?;
    let path = dir.join("variance.csv");
    write_variance_csv(create(&path)?, &report).map_err(io_err(&path))?;
    for row in &report.rows {
        println!(
            "{:>9} k={:<2} cov_trace {:.6e}",
            row.estimator.name(),
            row.k,
            row.cov_trace
        );
    }
    match report.slope_loglog {
        Some(s) => println!(
            "log-log slope {s:.4} (1/K gives -1, 1/K^2 gives -2); wrote {}",
            path.display()
        ),
        None => println!("no slope (need two distinct K); wrote {}", path.display()),
    }
    Ok(())
}

fn gradcheck(cfg: &CliConfig, flip_sign: bool) -> Result<(), CliError> {
    let report = run_gradcheck(cfg.cases, GradcheckOptions { flip_sign })?;
    for case in &report.cases {
        println!(
            "{:<40} {:>5} coords  max rel error {:.3e}",
            case.name, case.coordinates, case.max_rel_error
        );
    }
    for m in report.failures.iter().take(20) {
        println!(
            "MISMATCH {} coord {}: analytic {:.8e} numeric {:.8e} rel {:.3e}",
            m.case, m.coordinate, m.analytic, m.numeric, m.rel_error
        );
    }
    if report.failures.len() > 20 {
        println!("... {} more mismatches", report.failures.len() - 20);
    }
    println!("max relative error {:.3e}", report.max_rel_error());
    if report.passed() {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradcheck: FAIL ({} mismatched coordinates)",
            report.failures.len()
        )))
    }
}

/// REINFORCE (K=1), REINFORCE_BC (K=2), PPO (K=1), then LOOP at each `loop_ks`.
pub fn compare_variants(cfg: &CliConfig) -> Vec<TrainConfig> {
    let mut out = vec![
        (EstimatorKind::Reinforce, 1),
        (EstimatorKind::ReinforceBc, 2),
        (EstimatorKind::PpoClip, 1),
    ];
    out.extend(cfg.loop_ks.iter().map(|&k| (EstimatorKind::Loop, k)));
    out.into_iter()
        .map(|(estimator, k)| TrainConfig {
            estimator,
            k,
            ..cfg.train.clone()
        })
        .collect()
}

fn compare(cfg: &CliConfig) -> Result<(), CliError> {
    let dir = out_dir(cfg)?.to_path_buf();
    let variants = compare_variants(cfg);
    for v in &variants {
        v.validate()?;
    }
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.train.seed + i).collect();
    let runs = compare_runs(&variants, &seeds, cfg.timing)?;

    let rows: Vec<MetricsRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    let path = dir.join("compare.csv");
    write_metrics_csv(create(&path)?, &rows).map_err(io_err(&path))?;

    let summary: PathBuf = dir.join("validation.csv");
    let mut w = create(&summary)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(
            w,
            "run_id,estimator,k,seed,base_validation,final_validation"
        )?;
        for r in &runs {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.config.run_id(),
                r.config.estimator,
                r.config.k,
                r.config.seed,
                r.base_validation,
                r.final_validation
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(&summary))?;

    for v in &variants {
        let finals: Vec<f64> = runs
            .iter()
            .filter(|r| r.config.estimator == v.estimator && r.config.k == v.k)
            .map(|r| r.final_validation)
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        println!(
            "{:<14} k={}  mean final validation {mean:.4} over {} seeds",
            v.estimator.name(),
            v.k,
            finals.len()
        );
    }
    println!("wrote {} and {}", path.display(), summary.display());
    Ok(())
}

use std::path::Path;
use std::process::{Command, Output};

use looprl_cli::{compare_variants, resolve_config, Cli, CliConfig, CliError, KEYS};
use looprl_core::EstimatorKind;

use clap::Parser;

fn parse(args: &[&str]) -> Result<CliConfig, CliError> {
    let mut argv = vec!["looprl"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).expect("clap parse");
    resolve_config(cli.command.flags())
}

fn looprl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_looprl"))
        .args(args)
        .env_remove("LOOP_RL_SEED")
        .output()
        .unwrap()
}

const TINY: &[&str] = &[
    "--steps",
    "3",
    "--hidden",
    "8",
    "--pretrain-steps",
    "50",
    "--pretrain-batch",
    "16",
    "--dataset-size",
    "64",
    "--epochs",
    "2",
    "--groups-per-epoch",
    "4",
    "--minibatch-groups",
    "2",
    "--inner-epochs",
    "2",
    "--validation-per-prompt",
    "2",
];

fn tiny(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    looprl(&args)
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

#[test]
fn no_flags_gives_defaults() {
    if std::env::var_os("LOOP_RL_SEED").is_some() {
        return;
    }
    assert_eq!(parse(&["finetune"]).unwrap(), CliConfig::default());
}

#[test]
fn flags_set_fields() {
    let cfg = parse(&[
        "finetune",
        "--estimator",
        "loop",
        "--k",
        "4",
        "--hidden",
        "16,8",
        "--epsilon",
        "inf",
    ])
    .unwrap();
    assert_eq!(cfg.train.estimator, EstimatorKind::Loop);
    assert_eq!(cfg.train.k, 4);
    assert_eq!(cfg.train.hidden, vec![16, 8]);
    assert!(cfg.train.epsilon.is_infinite());
    let cfg = parse(&["compare", "--no-timing", "--estimator", "ppo", "--k", "1"]).unwrap();
    assert_eq!(cfg.train.estimator, EstimatorKind::PpoClip);
    assert!(!cfg.timing);
}

#[test]
fn flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    std::fs::write(
        &file,
        "# comment\nk = 2\nestimator = rloo\n\nlr=0.01  # trailing\ngroups-per-epoch = 12\n",
    )
    .unwrap();
    let path = file.to_str().unwrap();
    let cfg = parse(&["finetune", "--config", path, "--k", "8"]).unwrap();
    assert_eq!(cfg.train.k, 8);
    assert_eq!(cfg.train.estimator, EstimatorKind::Rloo);
    assert_eq!(cfg.train.lr, 0.01);
    assert_eq!(cfg.train.groups_per_epoch, 12);
}

#[test]
fn unknown_key_lists_valid_keys() {
    let mut cfg = CliConfig::default();
    let err = cfg
        .apply_file_text("learning_rate = 3", "x.conf")
        .unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, CliError::Config(_)));
    assert!(
        msg.contains("x.conf:1") && msg.contains("learning_rate"),
        "{msg}"
    );
    for (key, _) in KEYS {
        assert!(msg.contains(key), "{key} missing from {msg}");
    }
}

#[test]
fn malformed_value_names_key_and_type() {
    let mut cfg = CliConfig::default();
    let msg = cfg.set("epochs", "ten").unwrap_err().to_string();
    assert!(
        msg.contains("'epochs'") && msg.contains("non-negative integer"),
        "{msg}"
    );
    let msg = cfg.apply_file_text("k 4", "f").unwrap_err().to_string();
    assert!(msg.contains("key = value"), "{msg}");
}

#[test]
fn invalid_combinations_rejected() {
    assert!(matches!(
        parse(&["finetune", "--estimator", "rloo", "--k", "1"]),
        Err(CliError::Config(_))
    ));
    assert!(matches!(
        parse(&["finetune", "--epsilon", "2"]),
        Err(CliError::Config(_))
    ));
    assert!(matches!(
        parse(&["finetune", "--reward", "nope"]),
        Err(CliError::Config(_))
    ));
    assert!(matches!(
        parse(&["compare", "--loop-ks", "1,4"]),
        Err(CliError::Config(_))
    ));
}

#[test]
fn compare_variant_set() {
    let cfg = CliConfig::default();
    let v: Vec<(EstimatorKind, usize)> = compare_variants(&cfg)
        .iter()
        .map(|c| (c.estimator, c.k))
        .collect();
    assert_eq!(
        v,
        vec![
            (EstimatorKind::Reinforce, 1),
            (EstimatorKind::ReinforceBc, 2),
            (EstimatorKind::PpoClip, 1),
            (EstimatorKind::Loop, 2),
            (EstimatorKind::Loop, 4),
        ]
    );
}

#[test]
fn gradcheck_exit_codes() {
    let ok = looprl(&["gradcheck", "--cases", "2"]);
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok));
    assert!(text(&ok).contains("gradcheck: PASS"));
    let bad = looprl(&["gradcheck", "--cases", "1", "--flip-sign"]);
    assert_eq!(bad.status.code(), Some(1), "{}", text(&bad));
    assert!(text(&bad).contains("MISMATCH"));
}

#[test]
fn config_errors_exit_2() {
    for args in [
        &["finetune", "--k", "many"][..],
        &["finetune", "--bogus-flag"][..],
        &["frobnicate"][..],
        &["finetune", "--estimator", "grpo"][..],
    ] {
        let out = looprl(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", text(&out));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_looprl"))
        .args(["gradcheck", "--cases", "1"])
        .env("LOOP_RL_SEED", "minus-one")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.conf");
    let out = looprl(&["finetune", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));

    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let out = tiny("pretrain", &file.join("sub"), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));

    let out = tiny(
        "finetune",
        &dir.path().join("o"),
        &["--base", missing.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
}

#[test]
fn help_exits_0() {
    let out = looprl(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&looprl(&["finetune", "--help"]).stdout).to_string();
    assert!(help.contains("--groups-per-epoch") && !help.contains("flip-sign"));
}

#[test]
fn pretrain_then_finetune_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("nested/pre");
    let out = tiny("pretrain", &out_dir, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for f in ["base.ckpt", "dataset.txt", "pretrain_loss.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(out_dir.join("pretrain_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 51);

    let base = out_dir.join("base.ckpt");
    let ft = dir.path().join("ft");
    let out = tiny(
        "finetune",
        &ft,
        &["--base", base.to_str().unwrap(), "--epochs", "0"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = std::fs::read_to_string(ft.join("metrics.csv")).unwrap();
    assert_eq!(csv, format!("{}\n", looprl_core::trainer::METRICS_HEADER));
    // epochs = 0 leaves the pretrained parameters untouched
    let a = looprl_core::nn::load_checkpoint(&base).unwrap();
    let b = looprl_core::nn::load_checkpoint(&ft.join("policy.ckpt")).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn finetune_uses_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "finetune",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--no-timing",
    ];
    args.extend_from_slice(TINY);
    let out = Command::new(env!("CARGO_BIN_EXE_looprl"))
        .args(&args)
        .env("LOOP_RL_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(
        csv.lines()
            .skip(1)
            .all(|l| l.starts_with("loop-k4-s7,loop,4,7,")),
        "{csv}"
    );
}

#[test]
fn compare_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = tiny("compare", d, &["--seeds", "3", "--no-timing"]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    }
    let csv_a = std::fs::read(a.join("compare.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("compare.csv")).unwrap());
    let csv = String::from_utf8(csv_a).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(looprl_core::trainer::METRICS_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 15 * 2);
    let mut ids: Vec<&str> = rows.iter().map(|l| l.split(',').next().unwrap()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 15);
    assert!(rows.iter().all(|l| l.ends_with(",0")));
    let summary = std::fs::read_to_string(a.join("validation.csv")).unwrap();
    assert_eq!(summary.lines().count(), 16);
}

#[test]
fn variance_study_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny(
        "variance-study",
        dir.path(),
        &["--ks", "1,2,4", "--resamples", "100"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let csv = std::fs::read_to_string(dir.path().join("variance.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], looprl_core::trainer::VARIANCE_HEADER);
    assert!(lines[1].starts_with("1,100,") && lines[3].starts_with("4,100,"));
    assert!(lines[4].starts_with("all,100,,"));
    let out = tiny("variance-study", dir.path(), &["--resamples", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

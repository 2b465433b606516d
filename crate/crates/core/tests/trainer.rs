use looprl_core::estimators::EstimatorKind;
use looprl_core::rewards::reward_registry;
use looprl_core::rng::{Purpose, StreamKey};
use looprl_core::trainer::{
    collect_rollouts, pretrain_base, run_experiment, snapshot_baselines, train_epoch, train_pass,
    variance_probe, variance_probe_with, EpochStats, TrainState, METRICS_HEADER,
};
use looprl_core::{Context, DiffusionPolicy, Error, TrainConfig};

fn small(estimator: EstimatorKind, k: usize) -> TrainConfig {
    TrainConfig {
        estimator,
        k,
        epochs: 3,
        groups_per_epoch: 8,
        minibatch_groups: 4,
        inner_epochs: 2,
        steps: 5,
        hidden: vec![8],
        pretrain_steps: 200,
        pretrain_batch: 32,
        dataset_size: 256,
        validation_per_prompt: 4,
        ..TrainConfig::default()
    }
}

fn base(config: &TrainConfig) -> DiffusionPolicy {
    pretrain_base(config).unwrap().0
}

#[test]
fn rollouts_cycle_prompts_and_replay() {
    let cfg = small(EstimatorKind::Loop, 3);
    let p = base(&cfg);
    let reward = reward_registry(&cfg.reward_name).unwrap();
    let key = StreamKey::new(4, Purpose::Rollout, 2);
    let a = collect_rollouts(&p, &reward, 6, 3, key).unwrap();
    let b = collect_rollouts(&p, &reward, 6, 3, key).unwrap();
    assert_eq!(a, b);
    let ids: Vec<usize> = a.groups.iter().map(|g| g.context().id()).collect();
    assert_eq!(ids, vec![0, 1, 2, 3, 0, 1]);
    assert!(a.groups.iter().all(|g| g.k() == 3));
    // trajectory j of group g is stream g * k + j
    let lone = p
        .rollout(&p.context(1).unwrap(), &reward, &mut key.rng(5))
        .unwrap();
    assert_eq!(a.groups[1].members()[2], lone);
    assert!(collect_rollouts(&p, &reward, 0, 3, key).is_err());
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    for kind in [
        EstimatorKind::Rloo,
        EstimatorKind::Loop,
        EstimatorKind::PpoClip,
    ] {
        let cfg = TrainConfig {
            lr: 0.0,
            weight_decay: 0.0,
            ..small(kind, if kind == EstimatorKind::PpoClip { 1 } else { 2 })
        };
        let p = base(&cfg);
        let out = run_experiment(&cfg, Some(&p), false).unwrap();
        assert_eq!(out.policy.params, p.params, "{kind}");
        assert!(out.policy.version > p.version);
    }
}

#[test]
fn first_loop_step_matches_rloo_step() {
    let make = |kind| TrainConfig {
        inner_epochs: 1,
        minibatch_groups: 8,
        epochs: 1,
        ..small(kind, 4)
    };
    let p = base(&make(EstimatorKind::Rloo));
    let a = run_experiment(&make(EstimatorKind::Rloo), Some(&p), false).unwrap();
    let b = run_experiment(&make(EstimatorKind::Loop), Some(&p), false).unwrap();
    let diff = a
        .policy
        .params
        .as_slice()
        .iter()
        .zip(b.policy.params.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "{diff}");
    assert!((a.rows[0].grad_norm - b.rows[0].grad_norm).abs() < 1e-10);
}

#[test]
fn runs_replay_exactly() {
    let cfg = TrainConfig {
        epochs: 5,
        ..small(EstimatorKind::Loop, 2)
    };
    let p = base(&cfg);
    let a = run_experiment(&cfg, Some(&p), false).unwrap();
    let b = run_experiment(&cfg, Some(&p), false).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.final_validation, b.final_validation);
    assert_eq!(a.rows.len(), 5);
    assert_eq!(a.rows[4].epoch, 4);
    assert!(a.rows.iter().all(|r| r.wallclock_s == 0.0));
}

#[test]
fn pretraining_replays_exactly() {
    let cfg = small(EstimatorKind::Loop, 2);
    let (a, trace_a) = pretrain_base(&cfg).unwrap();
    let (b, trace_b) = pretrain_base(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(trace_a, trace_b);
}

#[test]
fn step_counts_per_epoch() {
    let cases = [
        (EstimatorKind::Reinforce, 1, 1),
        (EstimatorKind::Rloo, 2, 1),
        // 8 groups, minibatches of 4, 2 passes
        (EstimatorKind::Loop, 2, 4),
        (EstimatorKind::PpoClip, 1, 4),
    ];
    for (kind, k, steps) in cases {
        let cfg = small(kind, k);
        let p = base(&cfg);
        let reward = reward_registry(&cfg.reward_name).unwrap();
        let mut state = TrainState::new(p.clone(), &cfg);
        let key = StreamKey::new(0, Purpose::Rollout, 0);
        let mut buffer = collect_rollouts(&p, &reward, cfg.groups_per_epoch, k, key).unwrap();
        let stats = train_epoch(&mut state, &mut buffer, &cfg, 0).unwrap();
        assert_eq!(stats.optimizer_steps, steps, "{kind}");
        assert_eq!(state.policy.version, p.version + steps as u64);
        assert_eq!(buffer.passes_used(), cfg.effective_inner_epochs());
    }
}

#[test]
fn buffers_cannot_be_overused_or_stale() {
    let cfg = small(EstimatorKind::Rloo, 2);
    let p = base(&cfg);
    let reward = reward_registry(&cfg.reward_name).unwrap();
    let key = StreamKey::new(0, Purpose::Rollout, 0);
    let shuffle = StreamKey::new(0, Purpose::Shuffle, 0);

    let mut state = TrainState::new(p.clone(), &cfg);
    let mut buffer = collect_rollouts(&p, &reward, 4, 2, key).unwrap();
    let baselines = snapshot_baselines(&state.baseline, &buffer);
    let mut stats = EpochStats::default();
    train_pass(
        &mut state,
        &mut buffer,
        &cfg,
        &baselines,
        shuffle,
        &mut stats,
    )
    .unwrap();
    let err = train_pass(
        &mut state,
        &mut buffer,
        &cfg,
        &baselines,
        shuffle,
        &mut stats,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Staleness { .. }), "{err}");

    // A fresh buffer from an older snapshot.
    let mut old = collect_rollouts(&p, &reward, 4, 2, key).unwrap();
    let err = train_pass(&mut state, &mut old, &cfg, &baselines, shuffle, &mut stats).unwrap_err();
    assert!(matches!(err, Error::Staleness { sampled, current } if current == sampled + 1));

    // Clipped estimators may reuse stale data, but only within the pass budget.
    let loop_cfg = TrainConfig {
        inner_epochs: 1,
        ..small(EstimatorKind::Loop, 2)
    };
    let mut state = TrainState::new(p.clone(), &loop_cfg);
    let mut buffer = collect_rollouts(&p, &reward, 4, 2, key).unwrap();
    let baselines = snapshot_baselines(&state.baseline, &buffer);
    train_pass(
        &mut state,
        &mut buffer,
        &loop_cfg,
        &baselines,
        shuffle,
        &mut stats,
    )
    .unwrap();
    let err = train_pass(
        &mut state,
        &mut buffer,
        &loop_cfg,
        &baselines,
        shuffle,
        &mut stats,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn ppo_baseline_starts_at_zero_and_lags_one_epoch() {
    let cfg = small(EstimatorKind::PpoClip, 1);
    let p = base(&cfg);
    let reward = reward_registry(&cfg.reward_name).unwrap();
    let mut state = TrainState::new(p.clone(), &cfg);
    let mut buffer =
        collect_rollouts(&p, &reward, 8, 1, StreamKey::new(0, Purpose::Rollout, 0)).unwrap();
    assert!(snapshot_baselines(&state.baseline, &buffer)
        .iter()
        .flatten()
        .all(|&b| b == 0.0));
    train_epoch(&mut state, &mut buffer, &cfg, 0).unwrap();
    for c in 0..4 {
        let rewards: Vec<f64> = buffer
            .trajectories()
            .filter(|t| t.context.id() == c)
            .map(|t| t.reward)
            .collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        assert!((state.baseline.value(c) - mean).abs() < 1e-15);
    }
}

#[test]
fn probe_is_deterministic() {
    let cfg = small(EstimatorKind::Loop, 2);
    let p = base(&cfg);
    let a = variance_probe(&p, &cfg, 4, 100).unwrap();
    let b = variance_probe(&p, &cfg, 4, 100).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mean.len(), p.params.len());
    assert!(a.cov_trace > 0.0);
    let total: f64 = a.std_err.iter().map(|s| s * s * 100.0).sum();
    assert!((total - a.cov_trace).abs() < 1e-9 * a.cov_trace);
    assert!(variance_probe(&p, &cfg, 4, 99).is_err());
}

#[test]
fn zero_reward_probe_has_zero_variance() {
    let zero = |_: &[f64], _: &Context| 0.0;
    for (kind, k) in [
        (EstimatorKind::PpoClip, 1),
        (EstimatorKind::Loop, 3),
        (EstimatorKind::Reinforce, 1),
    ] {
        let cfg = small(kind, k);
        let p = base(&cfg);
        let row = variance_probe_with(&p, &cfg, &zero, 4, 100).unwrap();
        assert_eq!(row.cov_trace, 0.0, "{kind}");
        assert!(row.mean.iter().all(|&m| m == 0.0));
    }
}

#[test]
fn zero_epochs_write_header_only() {
    let cfg = TrainConfig {
        epochs: 0,
        ..small(EstimatorKind::Loop, 2)
    };
    let p = base(&cfg);
    let out = run_experiment(&cfg, Some(&p), false).unwrap();
    assert_eq!(out.policy, p);
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, format!("{METRICS_HEADER}\n"));
    assert!(dir.path().join("policy.ckpt").exists());
}

#[test]
fn invalid_configs_rejected() {
    let p = base(&small(EstimatorKind::Loop, 2));
    for cfg in [
        small(EstimatorKind::Loop, 1),
        small(EstimatorKind::Rloo, 1),
        TrainConfig {
            epsilon: 1.5,
            ..small(EstimatorKind::Loop, 2)
        },
        TrainConfig {
            reward_name: "nope".into(),
            ..small(EstimatorKind::Loop, 2)
        },
    ] {
        assert!(run_experiment(&cfg, Some(&p), false).is_err());
    }
}

//! Finite-difference checks of the network and trajectory log-prob gradients.

use rand::Rng;

use crate::diffusion::{Context, DiffusionPolicy, NoiseSchedule};
use crate::nn::{mlp_backward, mlp_forward, MlpSpec, ParamVector};
use crate::rewards::reward_registry;
use crate::rng::{Purpose, StreamKey};
use crate::Result;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    /// Negates the analytic gradient before comparing. Mutation hook: a
    /// correct checker must then fail.
    pub flip_sign: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub case: String,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
    pub failures: Vec<Mismatch>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn compare(report: &mut GradcheckReport, name: String, analytic: &[f64], numeric: &[f64]) {
    let mut max_rel = 0.0f64;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = relative_error(a, n);
        max_rel = max_rel.max(rel);
        if rel.is_nan() || rel >= REL_TOL {
            report.failures.push(Mismatch {
                case: name.clone(),
                coordinate: i,
                analytic: a,
                numeric: n,
                rel_error: rel,
            });
        }
    }
    report.cases.push(CaseResult {
        name,
        coordinates: analytic.len(),
        max_rel_error: max_rel,
    });
}

fn central_difference(
    params: &ParamVector,
    f: impl Fn(&ParamVector) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = probe.0[i];
            probe.0[i] = orig + FD_STEP;
            let plus = f(&probe)?;
            probe.0[i] = orig - FD_STEP;
            let minus = f(&probe)?;
            probe.0[i] = orig;
            Ok((plus - minus) / (2.0 * FD_STEP))
        })
        .collect()
}

/// Random 2-8-2 networks: `d <output, cotangent> / d params`.
pub fn check_mlp(seed: u64, opts: GradcheckOptions, report: &mut GradcheckReport) -> Result<()> {
    let spec = MlpSpec::new(2, vec![8], 2)?;
    let mut rng = StreamKey::new(seed, Purpose::Check, 1).rng(0);
    let mut params = spec.init_params(&mut rng);
    for v in params.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    let input: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
    let cot: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (_, tape) = mlp_forward(&spec, &params, &input)?;
    let mut analytic = mlp_backward(&tape, &cot)?.params;
    if opts.flip_sign {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let numeric = central_difference(&params, |p| {
        let (y, _) = mlp_forward(&spec, p, &input)?;
        Ok(y.iter().zip(&cot).map(|(a, b)| a * b).sum())
    })?;
    compare(
        report,
        format!("mlp 2-8-2 seed {seed}"),
        &analytic,
        &numeric,
    );
    Ok(())
}

/// Small diffusion policy: gradient of the trajectory log-prob sum.
pub fn check_trajectory(
    seed: u64,
    opts: GradcheckOptions,
    report: &mut GradcheckReport,
) -> Result<()> {
    let schedule = NoiseSchedule::linear(3, 0.05, 0.3)?;
    let mut rng = StreamKey::new(seed, Purpose::Check, 2).rng(0);
    let mut policy = DiffusionPolicy::new(schedule, 2, 4, vec![6], None, &mut rng)?;
    for v in policy.params.as_mut_slice() {
        *v += rng.random_range(-0.3..0.3);
    }
    let reward = reward_registry("mode_distance")?;
    let ctx = Context::new((seed % 4) as usize, 4)?;
    let traj = policy.rollout(&ctx, &reward, &mut rng)?;

    let (_, mut analytic) = policy.trajectory_logprob_grad(&traj)?;
    if opts.flip_sign {
        analytic.iter_mut().for_each(|g| *g = -*g);
    }
    let numeric = central_difference(&policy.params, |p| {
        let mut probe = policy.clone();
        probe.params = p.clone();
        probe.trajectory_logprob_sum(&traj)
    })?;
    compare(
        report,
        format!("trajectory log-prob T=3 seed {seed}"),
        &analytic,
        &numeric,
    );
    Ok(())
}

/// Both suites over `cases` seeds each.
pub fn run_gradcheck(cases: u64, opts: GradcheckOptions) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::default();
    for seed in 0..cases {
        check_mlp(seed, opts, &mut report)?;
        check_trajectory(seed, opts, &mut report)?;
    }
    Ok(report)
}

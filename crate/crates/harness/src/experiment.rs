//! Convergence sweeps and the adaptive-versus-non-adaptive gap experiment.
//!
//! Every random quantity is derived from the configured seed through
//! ChaCha streams: row `k` of a sweep gets its own seed, and replication `i`
//! of a row draws an instance seed and one seed per algorithm from it.
//! Replications run on the rayon pool and are collected in order, so the
//! output does not depend on the thread count.

use parint_core::instances::{
    bump_instance, lq_error, min_resolution, moment_jackknife, parameter_bump_instance, polynomial_instance,
    smooth_instance, zero_instance, TestInstance,
};
use parint_core::multilevel::{self, Algorithm, CardinalityLedger, MultilevelOutput, RunOptions, Schedule};
use parint_core::rates::{self, Phi1Branch};
use parint_core::ProblemSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BumpProfile, ExperimentConfig, InstanceConfig};
use crate::fit::{upper_half_slope, SlopeFit};
use crate::HarnessError;

/// Tolerance of the closed-form integral check, relative to the instance
/// magnitude.
pub const FUBINI_TOL: f64 = 1e-8;
const FUBINI_POINTS: usize = 10;

/// Largest relative difference of evaluation counts in a gap row.
pub const PARITY_TOL: f64 = 0.1;

const INITIAL_SCALE: f64 = 0.03;

/// One convergence row. `eval_total` is the largest ledger total over the
/// replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub n: u64,
    pub eval_total: u64,
    pub err_mean: f64,
    pub err_stderr: f64,
    pub phi_theory: f64,
    pub seed: u64,
}

/// One gap row. Evaluation counts are maxima over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRecord {
    pub n: u64,
    pub level: u32,
    pub eval_a4: u64,
    pub eval_a5: u64,
    pub err_a4: f64,
    pub err_a5: f64,
    pub stderr_a4: f64,
    pub stderr_a5: f64,
    pub ratio: f64,
    /// Budget scale of the adaptive runs after calibration of the first
    /// replication.
    pub budget_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep<T> {
    pub rows: Vec<T>,
    /// Fitted slope of the error (convergence) or of the error ratio (gap)
    /// against `n` on the upper half of the grid.
    pub slope: Option<SlopeFit>,
    /// Error measurements whose value moved by more than 5% between the
    /// evaluation grid and the grid of half its resolution.
    pub under_resolved: usize,
}

/// Seed of row `k` of a sweep.
pub fn row_seed(master: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k);
    rng.random()
}

/// `(instance, first algorithm, second algorithm)` seeds per replication.
fn replication_seeds(row: u64, replications: usize) -> Vec<[u64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(row);
    (0..replications).map(|_| rng.random()).collect()
}

/// Cell level of the hardest bump instance for budget `n`: the coarsest
/// level `l0` when the mixed branch of the non-adaptive rate is active, the
/// finest level `l1` when the parametric branch is.
pub fn hard_level(spec: &ProblemSpec, n: u64) -> Result<u32, HarnessError> {
    let s = Schedule::new(n, spec, Algorithm::A4, &RunOptions::default())?;
    Ok(match rates::phi1_branch(spec) {
        Phi1Branch::Mixed => s.l0,
        Phi1Branch::Parametric => s.l1,
    })
}

/// Bump shape on which the non-adaptive lower bound is attained.
pub fn default_profile(spec: &ProblemSpec) -> BumpProfile {
    match rates::phi1_branch(spec) {
        Phi1Branch::Mixed => BumpProfile::Cell,
        Phi1Branch::Parametric => BumpProfile::Parameter,
    }
}

/// Builds the instance of one replication and checks its closed form.
pub fn build_instance(
    instance: &InstanceConfig,
    spec: &ProblemSpec,
    n: u64,
    seed: u64,
) -> Result<TestInstance, HarnessError> {
    let (d1, d2) = (spec.d1 as usize, spec.d2 as usize);
    let inst = match instance {
        InstanceConfig::Smooth {} => smooth_instance(d1, d2),
        InstanceConfig::Zero {} => zero_instance(d1, d2),
        InstanceConfig::Polynomial {} => polynomial_instance(spec.r, d1, d2, seed),
        InstanceConfig::Bump {
            level,
            pattern,
            amplitude,
            profile,
        } => {
            let level = match level {
                Some(l) => *l,
                None => hard_level(spec, n)?,
            };
            match profile.unwrap_or_else(|| default_profile(spec)) {
                BumpProfile::Cell => bump_instance(level, spec, *pattern, *amplitude, seed)?,
                BumpProfile::Parameter => parameter_bump_instance(level, spec, *pattern, *amplitude, seed)?,
            }
        }
    };
    inst.fubini_check(FUBINI_POINTS, FUBINI_TOL, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok(inst)
}

fn is_random(instance: &InstanceConfig) -> bool {
    matches!(instance, InstanceConfig::Polynomial {} | InstanceConfig::Bump { .. })
}

/// `L_q` error of `out`, on at least the configured grid.
fn measure(
    out: &MultilevelOutput,
    inst: &TestInstance,
    spec: &ProblemSpec,
    resolution: Option<usize>,
) -> Result<(f64, bool), HarnessError> {
    let res = resolution.unwrap_or(0).max(min_resolution(out));
    let e = lq_error(out, inst, spec.q, res)?;
    Ok((e.value, e.under_resolved))
}

fn phi_theory(spec: &ProblemSpec, n: u64, algorithm: Algorithm) -> Result<f64, HarnessError> {
    let env = rates::theory_envelopes(n as f64, spec)?;
    Ok(match algorithm {
        Algorithm::Det => env.det,
        Algorithm::A4 => Some(env.ran_non_upper),
        Algorithm::A5 => env.ran_upper,
    }
    .unwrap_or(f64::NAN))
}

struct Trial {
    error: f64,
    under_resolved: bool,
    ledger: CardinalityLedger,
}

fn run_trial(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    inst: &TestInstance,
    n: u64,
    seed: u64,
    opts: &RunOptions,
) -> Result<Trial, HarnessError> {
    let (out, ledger) = multilevel::run(algorithm, &cfg.spec, n, inst, seed, opts)?;
    let (error, under_resolved) = measure(&out, inst, &cfg.spec, cfg.resolution)?;
    Ok(Trial {
        error,
        under_resolved,
        ledger,
    })
}

/// Error of `cfg.algorithm` against `n` on every grid point.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Sweep<RunRecord>, HarnessError> {
    cfg.validate(&[cfg.algorithm])?;
    let opts = RunOptions {
        c1: cfg.c1,
        ..RunOptions::default()
    };
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    let mut under_resolved = 0;
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let seed = row_seed(cfg.seed, k as u64);
        let seeds = replication_seeds(seed, cfg.replications);
        let trials: Vec<Trial> = if cfg.algorithm == Algorithm::Det && !is_random(&cfg.instance) {
            // Nothing is random: one run stands for every replication.
            let inst = build_instance(&cfg.instance, &cfg.spec, n, seeds[0][0])?;
            let t = run_trial(cfg, Algorithm::Det, &inst, n, 0, &opts)?;
            (0..cfg.replications)
                .map(|_| Trial {
                    ledger: t.ledger.clone(),
                    ..t
                })
                .collect()
        } else {
            seeds
                .par_iter()
                .map(|s| {
                    let inst = build_instance(&cfg.instance, &cfg.spec, n, s[0])?;
                    run_trial(cfg, cfg.algorithm, &inst, n, s[1], &opts)
                })
                .collect::<Result<_, _>>()?
        };
        let errors: Vec<f64> = trials.iter().map(|t| t.error).collect();
        let (err_mean, err_stderr) = moment_jackknife(&errors, cfg.moment);
        under_resolved += trials.iter().filter(|t| t.under_resolved).count();
        let eval_total = trials.iter().map(|t| t.ledger.total).max().unwrap_or(0);
        if eval_total == 0 {
            return Err(HarnessError::Invariant(format!("no evaluations at n = {n}")));
        }
        rows.push(RunRecord {
            n,
            eval_total,
            err_mean,
            err_stderr,
            phi_theory: phi_theory(&cfg.spec, n, cfg.algorithm)?,
            seed,
        });
    }
    let slope = upper_half_slope(
        &rows.iter().map(|r| r.n).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.err_mean).collect::<Vec<_>>(),
    );
    Ok(Sweep {
        rows,
        slope,
        under_resolved,
    })
}

fn relative_gap(a4: u64, a5: u64) -> f64 {
    (a4 as f64 - a5 as f64).abs() / a4 as f64
}

/// Adaptive run whose ledger lies in `[0.9, 1] target`, found by a
/// safeguarded secant search on the budget scale. The ledger is affine in
/// the scale up to rounding, with the base term as intercept. It is a step
/// function of the scale and not quite monotone, so when the window is
/// skipped the closest run within the parity tolerance is used instead.
fn calibrate(
    spec: &ProblemSpec,
    n: u64,
    inst: &TestInstance,
    seed: u64,
    target: u64,
    c1: f64,
    start: f64,
) -> Result<(f64, MultilevelOutput, CardinalityLedger), HarnessError> {
    let lo_ok = (1.0 - PARITY_TOL) * target as f64;
    let aim = (1.0 - PARITY_TOL / 2.0) * target as f64;
    let run = |scale: f64| {
        let opts = RunOptions {
            budget_scale: scale,
            c1,
            damping: None,
        };
        multilevel::run_a5_seeded(spec, n, inst, seed, &opts)
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut fallback: Option<(f64, MultilevelOutput, CardinalityLedger)> = None;
    let mut scale = start;
    for _ in 0..60 {
        let (out, ledger) = run(scale)?;
        let total = ledger.total as f64;
        if total >= lo_ok && ledger.total <= target {
            return Ok((scale, out, ledger));
        }
        let gap = relative_gap(target, ledger.total);
        if gap <= PARITY_TOL && fallback.as_ref().is_none_or(|f| gap < relative_gap(target, f.2.total)) {
            fallback = Some((scale, out, ledger.clone()));
        }
        if ledger.total > target {
            hi = hi.min(scale);
        } else {
            lo = lo.max(scale);
        }
        if hi.is_finite() && hi <= lo * (1.0 + 1e-6) {
            break;
        }
        let base = ledger.base_evals as f64;
        if base >= lo_ok {
            return Err(HarnessError::Invariant(format!(
                "adaptive base term alone needs {base} evaluations, above the budget {target}"
            )));
        }
        let secant = scale * (aim - base) / (total - base).max(1.0);
        scale = if secant > lo && secant < hi && secant.is_finite() {
            secant
        } else if hi.is_finite() {
            if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                hi / 2.0
            }
        } else {
            lo * 2.0
        };
    }
    fallback.ok_or_else(|| {
        HarnessError::Invariant(format!("budget calibration did not reach parity at n = {n}"))
    })
}

struct GapTrial {
    a4: Trial,
    a5: Trial,
}

/// Runs both randomized algorithms on the same instances with matched
/// evaluation counts and reports the ratio of their errors.
pub fn run_gap(cfg: &ExperimentConfig) -> Result<Sweep<GapRecord>, HarnessError> {
    cfg.validate(&[Algorithm::A4, Algorithm::A5])?;
    let spec = cfg.spec;
    if !rates::gap_regime(&spec) {
        return Err(HarnessError::Config(format!(
            "the gap experiment needs 2 < p < q, got p = {}, q = {}",
            spec.p, spec.q
        )));
    }
    let a4_opts = RunOptions {
        c1: cfg.c1,
        ..RunOptions::default()
    };
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    let mut under_resolved = 0;
    // The adaptive estimator spends roughly `m` times more per unit budget,
    // so the matched scale is small. Each row starts from the previous one.
    let mut start = INITIAL_SCALE;
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let seed = row_seed(cfg.seed, k as u64);
        let seeds = replication_seeds(seed, cfg.replications);
        let level = match &cfg.instance {
            InstanceConfig::Bump { level: None, .. } => hard_level(&spec, n)?,
            InstanceConfig::Bump { level: Some(l), .. } => *l,
            _ => 0,
        };
        let row_start = start;
        let trial = |s: &[u64; 3], scale: Option<f64>| -> Result<(GapTrial, f64), HarnessError> {
            let inst = build_instance(&cfg.instance, &spec, n, s[0])?;
            let a4 = run_trial(cfg, Algorithm::A4, &inst, n, s[1], &a4_opts)?;
            let target = a4.ledger.total;
            let reuse = match scale {
                Some(scale) => {
                    let opts = RunOptions {
                        budget_scale: scale,
                        c1: cfg.c1,
                        damping: None,
                    };
                    let (out, ledger) = multilevel::run_a5_seeded(&spec, n, &inst, s[2], &opts)?;
                    (relative_gap(target, ledger.total) <= PARITY_TOL).then_some((scale, out, ledger))
                }
                None => None,
            };
            let (scale, out, ledger) = match reuse {
                Some(found) => found,
                None => calibrate(&spec, n, &inst, s[2], target, cfg.c1, scale.unwrap_or(row_start))?,
            };
            let (error, flag) = measure(&out, &inst, &spec, cfg.resolution)?;
            let a5 = Trial {
                error,
                under_resolved: flag,
                ledger,
            };
            Ok((GapTrial { a4, a5 }, scale))
        };
        let (first, scale) = trial(&seeds[0], None)?;
        start = scale;
        let rest: Vec<GapTrial> = seeds[1..]
            .par_iter()
            .map(|s| trial(s, Some(scale)).map(|(t, _)| t))
            .collect::<Result<_, _>>()?;
        let trials: Vec<GapTrial> = std::iter::once(first).chain(rest).collect();

        let errs = |pick: fn(&GapTrial) -> &Trial| -> Vec<f64> { trials.iter().map(|t| pick(t).error).collect() };
        let (err_a4, stderr_a4) = moment_jackknife(&errs(|t| &t.a4), cfg.moment);
        let (err_a5, stderr_a5) = moment_jackknife(&errs(|t| &t.a5), cfg.moment);
        under_resolved += trials
            .iter()
            .map(|t| t.a4.under_resolved as usize + t.a5.under_resolved as usize)
            .sum::<usize>();
        let eval_a4 = trials.iter().map(|t| t.a4.ledger.total).max().unwrap_or(0);
        let eval_a5 = trials.iter().map(|t| t.a5.ledger.total).max().unwrap_or(0);
        if eval_a4 == 0 || relative_gap(eval_a4, eval_a5) > PARITY_TOL {
            return Err(HarnessError::Invariant(format!(
                "evaluation counts not matched at n = {n}: {eval_a4} vs {eval_a5}"
            )));
        }
        rows.push(GapRecord {
            n,
            level,
            eval_a4,
            eval_a5,
            err_a4,
            err_a5,
            stderr_a4,
            stderr_a5,
            ratio: err_a4 / err_a5,
            budget_scale: scale,
            seed,
        });
    }
    let slope = upper_half_slope(
        &rows.iter().map(|r| r.n).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.ratio).collect::<Vec<_>>(),
    );
    Ok(Sweep {
        rows,
        slope,
        under_resolved,
    })
}

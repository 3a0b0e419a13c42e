//! Invariant checks shared by the `selftest` subcommand and the acceptance
//! target. Every check is deterministic given its seed.

use std::panic::{catch_unwind, AssertUnwindSafe};

use parint_core::discrete_mean::{
    exact_mean, mc_mean_adaptive_seeded, mc_mean_nonadaptive_seeded, DenseTensor,
};
use parint_core::instances::{
    bump_instance, gauss_legendre, lq_error, min_resolution, polynomial_instance, smooth_instance,
    zero_instance, SignPattern, TestInstance,
};
use parint_core::interpolation::{
    detail_apply, draw_shift, level_interpolate, DetailFrame, LagrangeBasis, ShiftMode,
};
use parint_core::multilevel::{
    self, repetitions, v_operator, Algorithm, RunOptions, Schedule, ThetaTable, UTensor,
};
use parint_core::rates::{
    gap_exponent, gap_regime, phi1_branch_exponents, phi1_rate, phi1_threshold, phi2_candidate_exponents,
    phi2_rate,
};
use parint_core::{CountingIntegrand, Exponent, FnIntegrand, ProblemSpec, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::experiment::FUBINI_TOL;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Random polynomial of degree at most `deg` in each variable.
fn random_poly(d: usize, deg: usize, rng: &mut ChaCha8Rng) -> impl Fn(&[f64]) -> f64 + Send + Sync {
    let terms = (deg + 1).pow(d as u32);
    let coeffs: Vec<f64> = (0..terms).map(|_| rng.random_range(-1.0..1.0)).collect();
    move |x: &[f64]| {
        coeffs
            .iter()
            .enumerate()
            .map(|(mut k, c)| {
                let mut v = *c;
                for xa in x.iter().rev() {
                    v *= xa.powi((k % (deg + 1)) as i32);
                    k /= deg + 1;
                }
                v
            })
            .sum()
    }
}

fn random_point(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random()).collect()
}

/// Piecewise interpolation on a shifted grid reproduces polynomials of
/// degree at most `r - 1` per variable.
pub fn interpolation_reproduction(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for r in 1..=3u32 {
        for d in 1..=2usize {
            let basis = LagrangeBasis::new(r, d).expect("valid basis");
            for shift in 0..20u32 {
                let g = random_poly(d, r as usize - 1, &mut rng);
                let rho = draw_shift(ShiftMode::Uniform, d, &mut rng);
                let f = FnIntegrand::new(d, &g);
                let p = level_interpolate(&basis, shift % 3, &rho, &f).poly;
                for _ in 0..1000 {
                    let x = random_point(d, &mut rng);
                    worst = worst.max((p.eval(&x) - g(&x)).abs());
                }
            }
        }
    }
    CheckResult::new(
        "interpolation reproduction",
        worst <= 1e-10,
        format!("sup error {worst:.3e} (bound 1e-10)"),
    )
}

/// Largest residual of `P_{l1} f - P_{l0} f - Σ P'_l f` over random points,
/// `(l0, l1) = (1, 4)`, `r = 2`, `d = 2`, ten shifts. With `corrupt` set the
/// detail frames get a flipped coarse sign.
pub fn telescoping_residual(seed: u64, corrupt: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = LagrangeBasis::new(2, 2).expect("valid basis");
    let (l0, l1) = (1u32, 4u32);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (a, b, c): (f64, f64, f64) = (rng.random_range(1.0..3.0), rng.random_range(0.5..2.0), rng.random());
        let g = move |x: &[f64]| (a * x[0] + b * x[1]).sin() + c * x[0] * x[1] * x[1] + (x[1] - c).exp();
        let f = FnIntegrand::new(2, g);
        let rho = draw_shift(ShiftMode::Uniform, 2, &mut rng);
        let mut frame = DetailFrame::new(&basis, &rho);
        if corrupt {
            frame.corrupt_coarse_sign();
        }
        let fine = level_interpolate(&basis, l1, &rho, &f).poly;
        let coarse = level_interpolate(&basis, l0, &rho, &f).poly;
        let details: Vec<_> = (l0..l1).map(|l| detail_apply(&frame, l, &f)).collect();
        for _ in 0..500 {
            let x = random_point(2, &mut rng);
            let sum: f64 = details.iter().map(|d| d.eval(&x)).sum();
            worst = worst.max((fine.eval(&x) - coarse.eval(&x) - sum).abs());
        }
    }
    worst
}

pub fn telescoping(seed: u64) -> CheckResult {
    let worst = telescoping_residual(seed, false);
    CheckResult::new(
        "telescoping identity",
        worst <= 1e-9,
        format!("max residual {worst:.3e} (bound 1e-9)"),
    )
}

/// The telescoping check must notice a flipped coarse sign.
pub fn telescoping_mutation(seed: u64) -> CheckResult {
    let worst = telescoping_residual(seed, true);
    CheckResult::new(
        "telescoping detects corrupted detail frame",
        worst > 1e-3,
        format!("residual with corrupted frame {worst:.3e}"),
    )
}

/// `S P'_l f` against `V_l` applied to the exact row means of `U_l f`, on a
/// 256-point parameter grid, `l = 2`, `d1 = d2 = 1`, `r ∈ {1, 2}`.
pub fn decomposition(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = 2u32;
    let (gx, gw) = gauss_legendre(8);
    let fine = 1usize << (l + 1);
    let mut worst = 0.0f64;
    for r in 1..=2u32 {
        let basis = LagrangeBasis::new(r, 2).expect("valid basis");
        let theta = ThetaTable::new(&basis, 1, 1).expect("valid table");
        for _ in 0..5 {
            let (a, b): (f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
            let f = FnIntegrand::new(2, move |x: &[f64]| (a * x[0] + 0.3).sin() * (b * x[1]).exp() + x[0] * x[1]);
            let rho = draw_shift(ShiftMode::Uniform, 2, &mut rng);
            let frame = DetailFrame::new(&basis, &rho);
            let u = UTensor::new(&frame, l, 1, 1, &f);
            let v = v_operator(&exact_mean(&u).row_means, l, &theta).expect("valid level");
            let det = detail_apply(&frame, l, &f);
            for k in 0..256 {
                let s = (k as f64 + 0.5) / 256.0;
                // The detail is polynomial on every level-(l+1) cell in t.
                let mut acc = 0.0;
                for c in 0..fine {
                    for (x, w) in gx.iter().zip(&gw) {
                        acc += w * det.eval(&[s, (c as f64 + x) / fine as f64]);
                    }
                }
                acc /= fine as f64;
                worst = worst.max((acc - v.eval(&[s])).abs());
            }
        }
    }
    CheckResult::new(
        "decomposition identity",
        worst <= 1e-9,
        format!("sup difference {worst:.3e} (bound 1e-9)"),
    )
}

/// `exact_mean` against integer summation on dyadic tensors, compared
/// bitwise. Entries are `k 2^-20` with `|k| <= 2^20`, so every partial sum
/// is exact in floating point and only the final division rounds.
pub fn oracle_equivalence(seed: u64, tensors: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (-20f64).exp2();
    let mut mismatches = 0usize;
    for _ in 0..tensors {
        let (n1, n2) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
        let ints: Vec<i64> = (0..n1 * n2).map(|_| rng.random_range(-(1i64 << 20)..=(1i64 << 20))).collect();
        let t = DenseTensor::new(n1, n2, ints.iter().map(|&k| k as f64 * scale).collect()).expect("sizes match");
        let got = exact_mean(&t);
        for i in 0..n1 {
            let sum: i64 = ints[i * n2..(i + 1) * n2].iter().sum();
            let want = sum as f64 * scale / n2 as f64;
            if got.row_means[i].to_bits() != want.to_bits() {
                mismatches += 1;
            }
        }
        if got.eval_count != (n1 * n2) as u64 {
            mismatches += 1;
        }
    }
    CheckResult::new(
        "discrete mean oracle",
        mismatches == 0,
        format!("{mismatches} mismatches over {tensors} tensors"),
    )
}

/// Per-row z-tests of the non-adaptive estimator with `n >= N1` on a fixed
/// random 4x8 tensor, `runs` runs for each of `seeds` base seeds.
pub fn unbiasedness(seed: u64, runs: u64, seeds: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = DenseTensor::new(4, 8, values).expect("sizes match");
    let exact = exact_mean(&t).row_means;
    let mut worst = 0.0f64;
    for b in 0..seeds {
        let mut sum = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for k in 0..runs {
            let est = mc_mean_nonadaptive_seeded(&t, 8, (b << 32) ^ k ^ seed).expect("nonempty");
            for i in 0..4 {
                let dev = est.row_means[i] - exact[i];
                sum[i] += dev;
                sq[i] += dev * dev;
            }
        }
        for i in 0..4 {
            let m = sum[i] / runs as f64;
            let var = (sq[i] / runs as f64 - m * m).max(0.0);
            let z = m / (var / runs as f64).sqrt();
            worst = worst.max(z.abs());
        }
    }
    CheckResult::new(
        "unbiasedness",
        worst <= 4.0,
        format!("max |z| {worst:.3} over {seeds} seeds x 4 rows, {runs} runs each (bound 4)"),
    )
}

fn spec(r: u32, p: Option<i64>, q: Option<i64>, d1: u32, d2: u32) -> ProblemSpec {
    ProblemSpec::from_ints(r, p, q, d1, d2).expect("valid spec")
}

/// Runs the estimators and both multilevel algorithms behind counting
/// wrappers. A violation is either a panic from an internal cap assertion
/// or a count that disagrees with the caps recomputed here.
pub fn cardinality_caps(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = 0usize;
    let mut violations = Vec::new();

    for k in 0..300u64 {
        let (n1, n2) = (rng.random_range(1..=16usize), rng.random_range(1..=16usize));
        let t = DenseTensor::from_fn(n1, n2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let n = rng.random_range(1..=200u64);
        let m = rng.random_range(1..=5usize);
        runs += 2;
        match catch_unwind(|| mc_mean_nonadaptive_seeded(&t, n, k)) {
            Ok(Ok(e)) if e.eval_count <= 2 * n => {}
            other => violations.push(format!("nonadaptive n={n}: {:?}", other.map(|r| r.map(|e| e.eval_count)))),
        }
        match catch_unwind(|| mc_mean_adaptive_seeded(&t, n, m, Exponent::integer(4), k)) {
            Ok(Ok(e)) if e.eval_count <= 6 * m as u64 * n => {}
            other => violations.push(format!("adaptive n={n} m={m}: {:?}", other.map(|r| r.map(|e| e.eval_count)))),
        }
    }

    let cases = [
        (Algorithm::A4, spec(1, Some(2), Some(2), 1, 1), vec![16u64, 256, 4096]),
        (Algorithm::A4, spec(2, Some(2), Some(2), 1, 1), vec![64, 1024]),
        (Algorithm::A4, spec(1, Some(1), Some(2), 1, 2), vec![64, 512]),
        (Algorithm::A5, spec(1, Some(4), None, 1, 1), vec![16, 256, 4096]),
        (Algorithm::A5, spec(2, Some(3), Some(6), 1, 1), vec![64, 1024]),
        (Algorithm::A5, spec(1, Some(3), Some(4), 2, 1), vec![8, 64]),
    ];
    for (algorithm, s, grid) in &cases {
        let d = s.d();
        for &n in grid {
            for rep in 0..3u64 {
                runs += 1;
                let f = CountingIntegrand::new(smooth_instance(s.d1 as usize, s.d2 as usize));
                let opts = RunOptions::default();
                let result = catch_unwind(AssertUnwindSafe(|| multilevel::run(*algorithm, s, n, &f, seed ^ rep, &opts)));
                let (_, ledger) = match result {
                    Ok(Ok(v)) => v,
                    Ok(Err(e)) => {
                        violations.push(format!("{algorithm:?} {s} n={n}: {e}"));
                        continue;
                    }
                    Err(_) => {
                        violations.push(format!("{algorithm:?} {s} n={n}: cap assertion"));
                        continue;
                    }
                };
                let basis = LagrangeBasis::new(s.r, d).expect("valid basis");
                let frame = DetailFrame::new(&basis, &vec![0.0; d]);
                let schedule = Schedule::new(n, s, *algorithm, &opts).expect("valid budget");
                let mut ok = ledger.total == f.calls() && ledger.total <= ledger.bound(frame.kappa2());
                for ((level, nl), entries) in schedule.levels().zip(&ledger.per_level_entries) {
                    let cap = match algorithm {
                        Algorithm::A5 => 6 * repetitions(&frame, s.d1, s.d2, level, opts.c1) as u64 * nl,
                        _ => 2 * nl,
                    };
                    ok &= *entries <= cap;
                }
                if !ok {
                    violations.push(format!("{algorithm:?} {s} n={n}: ledger {ledger:?}, calls {}", f.calls()));
                }
            }
        }
    }
    CheckResult::new(
        "cardinality caps",
        violations.is_empty(),
        if violations.is_empty() {
            format!("{runs} runs, no violations")
        } else {
            format!("{} violations in {runs} runs: {}", violations.len(), violations.join("; "))
        },
    )
}

fn exponent_grid() -> Vec<Exponent> {
    let mut v: Vec<Exponent> = Vec::new();
    for den in 1..=4i64 {
        for num in den..=12 * den {
            let e = Exponent::Finite(Rational::new(num, den));
            if !v.contains(&e) {
                v.push(e);
            }
        }
    }
    v.push(Exponent::Infinite);
    v
}

/// Exact rational checks of the rate formulas:
/// the maximal speedup `1/8` at `(1, 4, ∞, 1, 1)`, the bound `0 <= θ <= 1/8`
/// on random specs, and continuity of `Φ1` and `Φ2` across their branch
/// boundaries.
pub fn rates_arithmetic(seed: u64, random_specs: usize) -> CheckResult {
    let mut failures = Vec::new();
    let best = gap_exponent(&spec(1, Some(4), None, 1, 1));
    if best != Ok(Rational::new(1, 8)) {
        failures.push(format!("theta(1,4,inf,1,1) = {best:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tested = 0usize;
    while tested < random_specs {
        let p = Rational::new(rng.random_range(9..=200), rng.random_range(1..=4));
        let q = if rng.random_bool(0.3) {
            Exponent::Infinite
        } else {
            Exponent::Finite(Rational::new(rng.random_range(9..=400), rng.random_range(1..=4)))
        };
        let Ok(s) = ProblemSpec::new(
            rng.random_range(1..=6),
            Exponent::Finite(p),
            q,
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        ) else {
            continue;
        };
        if !gap_regime(&s) || s.require_solvable().is_err() {
            continue;
        }
        tested += 1;
        let theta = gap_exponent(&s).expect("gap regime");
        if theta < Rational::from_integer(0) || theta > Rational::new(1, 8) {
            failures.push(format!("theta{s} = {theta}"));
        }
    }

    // Branch boundaries on an exhaustive grid of small rationals.
    let (mut phi1_hits, mut phi2_hits) = (0usize, 0usize);
    let grid = exponent_grid();
    for r in 1..=4u32 {
        for d1 in 1..=3u32 {
            for d2 in 1..=3u32 {
                for p in &grid {
                    for q in &grid {
                        let Ok(s) = ProblemSpec::new(r, *p, *q, d1, d2) else { continue };
                        if s.require_solvable().is_err() {
                            continue;
                        }
                        let (mixed, parametric) = phi1_branch_exponents(&s);
                        // The active branch is the slower one, which makes
                        // Φ1 continuous; at the threshold both agree.
                        if phi1_rate(&s).exponent != mixed.max(parametric) {
                            failures.push(format!("phi1 branch not the maximum at {s}"));
                        }
                        let r_over_d1 = Rational::new(r as i64, d1 as i64);
                        if r_over_d1 == phi1_threshold(&s) {
                            phi1_hits += 1;
                            if mixed != parametric {
                                failures.push(format!("phi1 discontinuous at {s}"));
                            }
                        }
                        if !gap_regime(&s) {
                            continue;
                        }
                        let cand = phi2_candidate_exponents(&s);
                        let chosen = phi2_rate(&s).expect("gap regime").exponent;
                        let (inv_p, inv_q) = (s.p.inv(), s.q.inv());
                        let half = Rational::new(1, 2);
                        let (d1r, d2r) = (Rational::from_integer(d1 as i64), Rational::from_integer(d2 as i64));
                        let b7_lhs = (half - inv_p) * d2r;
                        let b7_rhs = (inv_p - inv_q) * d1r;
                        let c7 = (inv_p - inv_q) * (d1r / d2r + Rational::from_integer(1)) + half;
                        if b7_lhs == b7_rhs {
                            phi2_hits += 1;
                            if cand[0] != cand[1] {
                                failures.push(format!("phi2 discontinuous across the dimension split at {s}"));
                            }
                        }
                        // High and low smoothness meet at `c7` on the
                        // integration side and at `1 - 1/q` otherwise.
                        let (threshold, high) = if b7_lhs > b7_rhs {
                            (c7, cand[0])
                        } else {
                            (Rational::from_integer(1) - inv_q, cand[1])
                        };
                        if r_over_d1 == threshold {
                            phi2_hits += 1;
                            if high != cand[2] || chosen != cand[2] {
                                failures.push(format!("phi2 discontinuous across the smoothness split at {s}"));
                            }
                        }
                        // The speedup is the difference of the two exponents.
                        let theta = gap_exponent(&s).expect("gap regime");
                        if theta != phi1_rate(&s).exponent - chosen {
                            failures.push(format!("theta != phi1 - phi2 at {s}"));
                        }
                    }
                }
            }
        }
    }
    if phi1_hits == 0 || phi2_hits == 0 {
        failures.push(format!("no boundary points found ({phi1_hits}, {phi2_hits})"));
    }
    CheckResult::new(
        "rates arithmetic",
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "theta = 1/8 at (1,4,inf,1,1); {random_specs} random specs within [0, 1/8]; {phi1_hits} phi1 and {phi2_hits} phi2 boundary points continuous"
            )
        } else {
            format!("{} failures: {}", failures.len(), failures.iter().take(5).cloned().collect::<Vec<_>>().join("; "))
        },
    )
}

/// `A4` and `A5` return exactly zero on the zero function and reproduce the
/// parametric integral of max-degree `r - 1` polynomials to rounding,
/// for ten seeds each.
pub fn exactness(seed: u64) -> CheckResult {
    let mut failures = Vec::new();
    let mut worst_poly = 0.0f64;
    let cases = [
        (Algorithm::A4, spec(2, Some(2), Some(2), 1, 1), 256u64),
        (Algorithm::A4, spec(3, Some(2), Some(2), 1, 2), 512),
        (Algorithm::A5, spec(2, Some(4), None, 1, 1), 256),
        (Algorithm::A5, spec(2, Some(3), Some(6), 2, 1), 64),
    ];
    for (algorithm, s, n) in &cases {
        let (d1, d2) = (s.d1 as usize, s.d2 as usize);
        for k in 0..10u64 {
            let run_seed = seed.wrapping_add(k);
            let zero = zero_instance(d1, d2);
            match multilevel::run(*algorithm, s, *n, &zero, run_seed, &RunOptions::default()) {
                Ok((out, _)) => {
                    let flat = out.flatten();
                    if flat.coeffs.iter().any(|c| *c != 0.0) {
                        failures.push(format!("{algorithm:?} {s}: nonzero output on zero"));
                    }
                }
                Err(e) => failures.push(format!("{algorithm:?} {s}: {e}")),
            }
            let poly = polynomial_instance(s.r, d1, d2, run_seed);
            match multilevel::run(*algorithm, s, *n, &poly, run_seed, &RunOptions::default()) {
                Ok((out, _)) => {
                    let e = lq_error(&out, &poly, Exponent::Infinite, min_resolution(&out)).expect("resolution");
                    worst_poly = worst_poly.max(e.value);
                }
                Err(e) => failures.push(format!("{algorithm:?} {s}: {e}")),
            }
        }
    }
    if worst_poly > 1e-12 {
        failures.push(format!("polynomial error {worst_poly:.3e}"));
    }
    CheckResult::new(
        "zero preservation and polynomial exactness",
        failures.is_empty(),
        if failures.is_empty() {
            format!("10 seeds x {} cases; zero output exact; polynomial sup error {worst_poly:.3e}", cases.len())
        } else {
            failures.join("; ")
        },
    )
}

/// Closed-form parametric integrals of every instance family against
/// quadrature.
pub fn fubini_instances(seed: u64) -> CheckResult {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut check = |inst: TestInstance| {
        count += 1;
        match inst.fubini_check(10, FUBINI_TOL, seed) {
            Ok(w) => worst = worst.max(w),
            Err(e) => failures.push(e.to_string()),
        }
    };
    for &(d1, d2) in &[(1u32, 1u32), (1, 2), (2, 1)] {
        check(smooth_instance(d1 as usize, d2 as usize));
        check(zero_instance(d1 as usize, d2 as usize));
        check(polynomial_instance(3, d1 as usize, d2 as usize, seed));
        let s = spec(1, Some(4), None, d1, d2);
        for pattern in [SignPattern::Dense, SignPattern::HeavyRows { rows: 1 }] {
            for level in [1u32, 3] {
                check(bump_instance(level, &s, pattern, 1.0, seed).expect("valid bump"));
            }
        }
    }
    CheckResult::new(
        "closed-form parametric integrals",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{count} instances, max deviation {worst:.3e}")
        } else {
            failures.join("; ")
        },
    )
}

/// The full invariant suite behind `parint selftest`.
pub fn selftest(seed: u64) -> Vec<CheckResult> {
    vec![
        interpolation_reproduction(seed),
        telescoping(seed),
        telescoping_mutation(seed),
        decomposition(seed),
        oracle_equivalence(seed, 10_000),
        unbiasedness(seed, 100_000, 1),
        cardinality_caps(seed),
        rates_arithmetic(seed, 10_000),
        exactness(seed),
        fubini_instances(seed),
    ]
}

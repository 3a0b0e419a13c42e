//! Test functions with closed-form parametric integrals, error measurement
//! against them, and replicated error estimation.

use std::f64::consts::PI;
use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::Integrand;
use crate::multilevel::{CardinalityLedger, MultilevelOutput};
use crate::partition::{cell_count, locate, locate_axis};
use crate::problem::{Exponent, ProblemSpec};

type Func = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A function on `[0,1]^{d1+d2}` together with its exact `Sf`.
pub struct TestInstance {
    label: String,
    d1: usize,
    d2: usize,
    f: Func,
    sf: Func,
    /// Level of the cell grid on which the function is piecewise smooth,
    /// used to place quadrature nodes.
    quad_level: u32,
    /// Scale of `f` for quadrature tolerances.
    magnitude: f64,
}

impl fmt::Debug for TestInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestInstance")
            .field("label", &self.label)
            .field("d1", &self.d1)
            .field("d2", &self.d2)
            .finish()
    }
}

impl TestInstance {
    pub fn new(
        label: impl Into<String>,
        d1: usize,
        d2: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        sf: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            d1,
            d2,
            f: Box::new(f),
            sf: Box::new(sf),
            quad_level: 0,
            magnitude: 1.0,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn d2(&self) -> usize {
        self.d2
    }

    /// `(Sf)(s)`.
    pub fn exact_s(&self, s: &[f64]) -> f64 {
        (self.sf)(s)
    }

    /// Compares `exact_s` with composite Gauss quadrature over `t` at
    /// `points` random parameters. Fails if any difference exceeds
    /// `tol` times the magnitude of the instance.
    pub fn fubini_check(&self, points: usize, tol: f64, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_cell = if self.d2 == 1 { 24 } else { 16 };
        let cells = 1usize << self.quad_level;
        let (gx, gw) = gauss_legendre(per_cell);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let s: Vec<f64> = (0..self.d1).map(|_| rng.random()).collect();
            let quad = tensor_quadrature(self.d2, cells, &gx, &gw, |t| {
                let mut x = s.clone();
                x.extend_from_slice(t);
                (self.f)(&x)
            });
            worst = worst.max((quad - self.exact_s(&s)).abs());
        }
        if worst > tol * self.magnitude {
            return Err(Error::FubiniMismatch {
                label: self.label.clone(),
                diff: worst,
            });
        }
        Ok(worst)
    }
}

impl Integrand for TestInstance {
    fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Composite Gauss rule on `[0,1]^d` with `cells` intervals per axis.
fn tensor_quadrature(d: usize, cells: usize, gx: &[f64], gw: &[f64], f: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    let m = gx.len();
    let per_axis = cells * m;
    let total = per_axis.pow(d as u32);
    let h = 1.0 / cells as f64;
    (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut t = [0.0f64; crate::interpolation::MAX_DIM];
            let mut w = 1.0;
            for a in (0..d).rev() {
                let k = idx % per_axis;
                idx /= per_axis;
                let (c, q) = (k / m, k % m);
                t[a] = (c as f64 + gx[q]) * h;
                w *= gw[q] * h;
            }
            w * f(&t[..d])
        })
        .sum()
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=m {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, m as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        x.push(0.5 * (1.0 - z));
        w.push(1.0 / ((1.0 - z * z) * dp * dp));
    }
    (x, w)
}

/// `f(s,t) = Π cos(π s_a) Π sin(π t_b)` with `Sf(s) = Π cos(π s_a) (2/π)^{d2}`.
pub fn smooth_instance(d1: usize, d2: usize) -> TestInstance {
    let c = (2.0 / PI).powi(d2 as i32);
    let mut inst = TestInstance::new(
        "smooth",
        d1,
        d2,
        move |x: &[f64]| {
            let s: f64 = x[..d1].iter().map(|v| (PI * v).cos()).product();
            let t: f64 = x[d1..].iter().map(|v| (PI * v).sin()).product();
            s * t
        },
        move |s: &[f64]| s.iter().map(|v| (PI * v).cos()).product::<f64>() * c,
    );
    inst.quad_level = 2;
    inst
}

pub fn zero_instance(d1: usize, d2: usize) -> TestInstance {
    TestInstance::new("zero", d1, d2, |_: &[f64]| 0.0, |_: &[f64]| 0.0)
}

/// A random polynomial of maximal coordinate degree `r - 1` with
/// coefficients uniform in `[-1, 1]`.
pub fn polynomial_instance(r: u32, d1: usize, d2: usize, seed: u64) -> TestInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = r as usize;
    let d = d1 + d2;
    let terms = r.pow(d as u32);
    let exps: Vec<Vec<usize>> = (0..terms)
        .map(|mut k| {
            let mut e = vec![0; d];
            for a in (0..d).rev() {
                e[a] = k % r;
                k /= r;
            }
            e
        })
        .collect();
    let coeffs: Vec<f64> = (0..terms).map(|_| rng.random_range(-1.0..1.0)).collect();
    let magnitude = coeffs.iter().map(|c| c.abs()).sum();
    let (e1, c1) = (exps.clone(), coeffs.clone());
    let mut inst = TestInstance::new(
        format!("polynomial(r={r})"),
        d1,
        d2,
        move |x: &[f64]| {
            e1.iter()
                .zip(&c1)
                .map(|(e, c)| c * e.iter().zip(x).map(|(&k, v)| v.powi(k as i32)).product::<f64>())
                .sum()
        },
        move |s: &[f64]| {
            exps.iter()
                .zip(&coeffs)
                .map(|(e, c)| {
                    let ps: f64 = e[..d1].iter().zip(s).map(|(&k, v)| v.powi(k as i32)).product();
                    let pt: f64 = e[d1..].iter().map(|&k| 1.0 / (k as f64 + 1.0)).product();
                    c * ps * pt
                })
                .sum()
        },
    );
    inst.magnitude = magnitude;
    inst
}

/// `∫_0^1 exp(-1/(x(1-x))) dx`.
pub const BUMP_INTEGRAL: f64 = 0.007_029_858_406_609_656_2;

/// One-dimensional bump supported in `(0,1)`.
#[inline]
pub fn bump_1d(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        (-1.0 / (x * (1.0 - x))).exp()
    }
}

/// Sign patterns for bump instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SignPattern {
    /// Independent uniform signs on every cell.
    Dense,
    /// Independent uniform signs on the cells of `rows` random parameter
    /// cells, zero elsewhere.
    HeavyRows { rows: usize },
}

/// `f = c Σ_i g(i) ψ_li` with `ψ_li` the tensor bump rescaled to the
/// level-`l` cell `i`. The scale is `c = amplitude 2^{-rl} / ‖g‖_p` with the
/// normalized discrete norm, which keeps the Sobolev norm of order
/// `amplitude` for every level and pattern.
pub fn bump_instance(
    level: u32,
    spec: &ProblemSpec,
    pattern: SignPattern,
    amplitude: f64,
    seed: u64,
) -> Result<TestInstance> {
    if level == 0 {
        return Err(Error::InvalidSpec("bump level must be at least 1".into()));
    }
    let (d1, d2) = (spec.d1 as usize, spec.d2 as usize);
    let n1 = cell_count(level, d1);
    let n2 = cell_count(level, d2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Only the rows carrying signs are stored, sorted by parameter cell.
    let rows: Vec<usize> = match pattern {
        SignPattern::Dense => (0..n1).collect(),
        SignPattern::HeavyRows { rows } => {
            if rows == 0 || rows > n1 {
                return Err(Error::InvalidSpec(format!("heavy rows must lie in 1..={n1}")));
            }
            let mut v = index::sample(&mut rng, n1, rows).into_vec();
            v.sort_unstable();
            v
        }
    };
    let signs: Vec<f64> = (0..rows.len() * n2)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    // Normalized norm of a ±1 tensor supported on `rows.len()` of `n1` rows.
    let norm = match spec.p {
        Exponent::Infinite => 1.0,
        p => (rows.len() as f64 / n1 as f64).powf(1.0 / p.to_f64()),
    };
    let scale = amplitude * (-(spec.r as f64) * level as f64).exp2() / norm;
    let row_means: Vec<f64> = signs.chunks(n2).map(|c| c.iter().sum::<f64>() / n2 as f64).collect();
    let tau2 = BUMP_INTEGRAL.powi(d2 as i32);
    let m = (level as f64).exp2();
    let local = move |x: &[f64]| -> f64 {
        x.iter()
            .map(|&v| bump_1d(v * m - locate_axis(level, v) as f64))
            .product()
    };
    let lookup = rows.clone();
    let mut inst = TestInstance::new(
        format!("bump(l={level},{pattern:?})"),
        d1,
        d2,
        move |x: &[f64]| {
            let i1 = locate(level, &x[..d1]);
            match lookup.binary_search(&i1) {
                Ok(k) => scale * signs[k * n2 + locate(level, &x[d1..])] * local(x),
                Err(_) => 0.0,
            }
        },
        move |s: &[f64]| match rows.binary_search(&locate(level, s)) {
            Ok(k) if row_means[k] != 0.0 => scale * tau2 * row_means[k] * local(s),
            _ => 0.0,
        },
    );
    inst.quad_level = level;
    inst.magnitude = amplitude;
    Ok(inst)
}

/// `f(s,t) = c Σ_i g(i) ψ_li(s) Π (π/2) sin(π t_b)`: bumps in the parameter
/// only, with a smooth factor of unit integral in `t`. Unlike
/// [`bump_instance`] the rows do not cancel under integration, so `Sf` keeps
/// the full amplitude and the error is governed by parameter resolution.
/// Signs and scale follow [`bump_instance`].
pub fn parameter_bump_instance(
    level: u32,
    spec: &ProblemSpec,
    pattern: SignPattern,
    amplitude: f64,
    seed: u64,
) -> Result<TestInstance> {
    if level == 0 {
        return Err(Error::InvalidSpec("bump level must be at least 1".into()));
    }
    let (d1, d2) = (spec.d1 as usize, spec.d2 as usize);
    let n1 = cell_count(level, d1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = match pattern {
        SignPattern::Dense => (0..n1).collect(),
        SignPattern::HeavyRows { rows } => {
            if rows == 0 || rows > n1 {
                return Err(Error::InvalidSpec(format!("heavy rows must lie in 1..={n1}")));
            }
            let mut v = index::sample(&mut rng, n1, rows).into_vec();
            v.sort_unstable();
            v
        }
    };
    let signs: Vec<f64> = rows
        .iter()
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let norm = match spec.p {
        Exponent::Infinite => 1.0,
        p => (rows.len() as f64 / n1 as f64).powf(1.0 / p.to_f64()),
    };
    let scale = amplitude * (-(spec.r as f64) * level as f64).exp2() / norm;
    let m = (level as f64).exp2();
    let local = move |s: &[f64]| -> f64 {
        s.iter()
            .map(|&v| bump_1d(v * m - locate_axis(level, v) as f64))
            .product()
    };
    let row_value = {
        let rows = rows.clone();
        let signs = signs.clone();
        move |s: &[f64]| match rows.binary_search(&locate(level, s)) {
            Ok(k) => scale * signs[k] * local(s),
            Err(_) => 0.0,
        }
    };
    let exact = row_value.clone();
    let mut inst = TestInstance::new(
        format!("parameter_bump(l={level},{pattern:?})"),
        d1,
        d2,
        move |x: &[f64]| {
            let v = row_value(&x[..d1]);
            if v == 0.0 {
                return 0.0;
            }
            v * x[d1..].iter().map(|t| 0.5 * PI * (PI * t).sin()).product::<f64>()
        },
        exact,
    );
    inst.quad_level = level;
    inst.magnitude = amplitude;
    Ok(inst)
}

/// A measured `L_q(D_1)` error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LqError {
    pub value: f64,
    /// Value on the grid of half the resolution.
    pub coarse_value: f64,
    /// Set when the two grids disagree by more than 5%.
    pub under_resolved: bool,
}

/// Minimal grid resolution per axis for an output.
pub fn min_resolution(out: &MultilevelOutput) -> usize {
    1usize << (out.finest_level() + 2)
}

/// `‖Sf - A(f)‖_{L_q(D_1)}` by the composite midpoint rule with
/// `resolution` points per axis, or the grid maximum for `q = ∞`.
pub fn lq_error(out: &MultilevelOutput, inst: &TestInstance, q: Exponent, resolution: usize) -> Result<LqError> {
    let need = min_resolution(out);
    if resolution < need {
        return Err(Error::ResolutionTooSmall {
            got: resolution,
            need,
        });
    }
    let flat = out.flatten();
    let diff = |s: &[f64]| flat.eval(s) - inst.exact_s(s);
    let value = grid_norm(&diff, inst.d1, q, resolution);
    let coarse_value = grid_norm(&diff, inst.d1, q, resolution / 2);
    let under_resolved = (value - coarse_value).abs() > 0.05 * value.max(coarse_value);
    Ok(LqError {
        value,
        coarse_value,
        under_resolved,
    })
}

/// Normalized `L_q` norm of `f` on the midpoint grid. Partial results are
/// combined in a fixed order so the value does not depend on the thread
/// count.
pub fn grid_norm(f: &(impl Fn(&[f64]) -> f64 + Sync), d: usize, q: Exponent, resolution: usize) -> f64 {
    let total = resolution.pow(d as u32);
    let h = 1.0 / resolution as f64;
    let point = |mut idx: usize, s: &mut [f64]| {
        for a in (0..d).rev() {
            s[a] = ((idx % resolution) as f64 + 0.5) * h;
            idx /= resolution;
        }
    };
    let abs_at = |idx: usize| {
        let mut s = [0.0f64; crate::interpolation::MAX_DIM];
        point(idx, &mut s[..d]);
        f(&s[..d]).abs()
    };
    let chunk = resolution;
    let max = (0..total)
        .into_par_iter()
        .map(abs_at)
        .reduce(|| 0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    match q {
        Exponent::Infinite => max,
        Exponent::Finite(_) => {
            let qf = q.to_f64();
            let partial: Vec<f64> = (0..total.div_ceil(chunk))
                .into_par_iter()
                .map(|c| {
                    (c * chunk..((c + 1) * chunk).min(total))
                        .map(|i| (abs_at(i) / max).powf(qf))
                        .sum::<f64>()
                })
                .collect();
            max * (partial.iter().sum::<f64>() / total as f64).powf(1.0 / qf)
        }
    }
}

/// `(E ‖Sf - A(f)‖^w)^{1/w}` over replications with its jackknife standard
/// error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub errors: Vec<f64>,
    pub ledgers: Vec<CardinalityLedger>,
    pub under_resolved: usize,
}

/// Runs `runner(seed)` for `replications` seeds split from `seed` and
/// measures each output against `inst` in `L_q`, averaging the `w`-th
/// power of the error.
pub fn expected_error<R>(
    runner: R,
    inst: &TestInstance,
    q: Exponent,
    w: f64,
    replications: usize,
    seed: u64,
) -> Result<ErrorEstimate>
where
    R: Fn(u64) -> Result<(MultilevelOutput, CardinalityLedger)>,
{
    if replications < 2 {
        return Err(Error::InvalidSpec("at least two replications are needed".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..replications).map(|_| master.random()).collect();
    let mut errors = Vec::with_capacity(replications);
    let mut ledgers = Vec::with_capacity(replications);
    let mut under_resolved = 0;
    for s in seeds {
        let (out, ledger) = runner(s)?;
        let e = lq_error(&out, inst, q, min_resolution(&out))?;
        under_resolved += e.under_resolved as usize;
        errors.push(e.value);
        ledgers.push(ledger);
    }
    let (mean, stderr) = moment_jackknife(&errors, w);
    Ok(ErrorEstimate {
        mean,
        stderr,
        errors,
        ledgers,
        under_resolved,
    })
}

/// `(mean e^w)^{1/w}` of `errors` and its jackknife standard error.
pub fn moment_jackknife(errors: &[f64], w: f64) -> (f64, f64) {
    let r = errors.len();
    let total: f64 = errors.iter().map(|e| e.powf(w)).sum();
    let mean = (total / r as f64).powf(1.0 / w);
    if r < 2 {
        return (mean, 0.0);
    }
    let loo: Vec<f64> = errors
        .iter()
        .map(|e| ((total - e.powf(w)).max(0.0) / (r - 1) as f64).powf(1.0 / w))
        .collect();
    let avg = loo.iter().sum::<f64>() / r as f64;
    let var: f64 = loo.iter().map(|v| (v - avg).powi(2)).sum::<f64>() * (r - 1) as f64 / r as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpolation::{LagrangeBasis, PiecewisePoly};
    use crate::multilevel::{run, run_deterministic, Algorithm, LevelDetail, RunOptions};

    fn spec(r: u32, p: Option<i64>, q: Option<i64>, d1: u32, d2: u32) -> ProblemSpec {
        ProblemSpec::from_ints(r, p, q, d1, d2).unwrap()
    }

    #[test]
    fn bump_integral_matches_quadrature() {
        let (x, w) = gauss_legendre(40);
        let q = tensor_quadrature(1, 16, &x, &w, |t| bump_1d(t[0]));
        assert!((q - BUMP_INTEGRAL).abs() < 1e-12, "{q}");
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        for k in 0..10 {
            let q: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(k)).sum();
            assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_examples() {
        let inst = smooth_instance(1, 1);
        assert!((inst.exact_s(&[0.0]) - 2.0 / PI).abs() < 1e-15);
        assert!(inst.exact_s(&[0.5]).abs() < 1e-15);
        assert!(inst.fubini_check(10, 1e-10, 1).unwrap() < 1e-10);
        smooth_instance(2, 2).fubini_check(10, 1e-10, 2).unwrap();
    }

    #[test]
    fn polynomial_fubini() {
        for r in 1..=3 {
            polynomial_instance(r, 1, 2, r as u64).fubini_check(10, 1e-12, 0).unwrap();
            polynomial_instance(r, 2, 1, r as u64).fubini_check(10, 1e-12, 0).unwrap();
        }
    }

    #[test]
    fn bump_fubini_and_support() {
        let sp = spec(1, Some(4), None, 1, 1);
        for l in 1..=5 {
            for pattern in [SignPattern::Dense, SignPattern::HeavyRows { rows: 1 }] {
                let inst = bump_instance(l, &sp, pattern, 1.0, l as u64).unwrap();
                inst.fubini_check(10, 1e-8, 3).unwrap();
                // Vanishes on every cell face.
                let h = (-(l as f64)).exp2();
                for k in 0..=(1usize << l) {
                    assert_eq!(inst.eval(&[k as f64 * h, 0.3]), 0.0);
                    assert_eq!(inst.eval(&[0.3, k as f64 * h]), 0.0);
                }
            }
        }
        let sp2 = spec(2, Some(4), None, 1, 2);
        bump_instance(2, &sp2, SignPattern::Dense, 1.0, 9).unwrap().fubini_check(5, 1e-8, 4).unwrap();
    }

    #[test]
    fn parameter_bump_keeps_its_integral() {
        let sp = spec(1, Some(3), Some(4), 2, 1);
        for pattern in [SignPattern::Dense, SignPattern::HeavyRows { rows: 2 }] {
            let inst = parameter_bump_instance(2, &sp, pattern, 1.0, 4).unwrap();
            inst.fubini_check(10, 1e-8, 5).unwrap();
        }
        let inst = parameter_bump_instance(3, &spec(1, Some(4), None, 1, 1), SignPattern::Dense, 1.0, 1).unwrap();
        // Every row carries mass: |Sf| at a cell centre equals the scaled peak.
        let peak = 2f64.powi(-3) * bump_1d(0.5);
        for k in 0..8 {
            let s = (k as f64 + 0.5) / 8.0;
            assert!((inst.exact_s(&[s]).abs() - peak).abs() < 1e-15);
        }
        assert!(parameter_bump_instance(0, &sp, SignPattern::Dense, 1.0, 0).is_err());
    }

    #[test]
    fn bump_all_plus_level_one() {
        let sp = spec(1, Some(4), None, 1, 1);
        // With every sign +1 a single heavy row at level 1 covers half the
        // parameter range; compare with the closed form there.
        let inst = bump_instance(1, &sp, SignPattern::Dense, 1.0, 0).unwrap();
        let s = 0.3;
        let quad = {
            let (x, w) = gauss_legendre(40);
            tensor_quadrature(1, 2, &x, &w, |t| inst.eval(&[s, t[0]]))
        };
        assert!((quad - inst.exact_s(&[s])).abs() < 1e-14);
    }

    #[test]
    fn alternating_row_integrates_to_zero() {
        let sp = spec(1, Some(4), None, 1, 1);
        let inst = bump_instance(3, &sp, SignPattern::Dense, 1.0, 5).unwrap();
        // Fubini holds row by row, so a row whose signs cancel has Sf = 0.
        for k in 0..8 {
            let s = (k as f64 + 0.5) / 8.0;
            let (x, w) = gauss_legendre(24);
            let quad = tensor_quadrature(1, 8, &x, &w, |t| inst.eval(&[s, t[0]]));
            let exact = inst.exact_s(&[s]);
            assert!((quad - exact).abs() < 1e-12);
        }
    }

    /// Finite-difference proxy of the order-`r` derivatives of a single
    /// scaled bump stays bounded in the level.
    #[test]
    fn bump_scaling_is_level_independent() {
        let sp = spec(2, None, None, 1, 1);
        let mut proxies = Vec::new();
        for l in 1..=5u32 {
            let inst = bump_instance(l, &sp, SignPattern::HeavyRows { rows: 1 }, 1.0, 17).unwrap();
            let h = (-(l as f64)).exp2() * 1e-3;
            let mut best = 0.0f64;
            for a in 0..400 {
                for b in 0..3 {
                    let x = [a as f64 / 400.0, (b as f64 + 0.5) / 3.0];
                    // Second derivative in s.
                    let d2 = (inst.eval(&[x[0] + h, x[1]]) - 2.0 * inst.eval(&x) + inst.eval(&[x[0] - h, x[1]])) / (h * h);
                    best = best.max(d2.abs());
                }
            }
            proxies.push(best);
        }
        let (lo, hi) = proxies.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo < 8.0, "{proxies:?}");
    }

    fn poly_output(values: &[f64], level: u32) -> MultilevelOutput {
        let basis = LagrangeBasis::new(1, 1).unwrap();
        let mut base = PiecewisePoly::zero(basis, level);
        base.coeffs.copy_from_slice(values);
        MultilevelOutput {
            base,
            details: Vec::<LevelDetail>::new(),
        }
    }

    #[test]
    fn lq_error_of_constant_difference() {
        let inst = zero_instance(1, 1);
        let out = poly_output(&[0.25, 0.25], 1);
        for q in [Exponent::integer(1), Exponent::integer(2), Exponent::Infinite] {
            let e = lq_error(&out, &inst, q, 64).unwrap();
            assert!((e.value - 0.25).abs() < 1e-15);
            assert!(!e.under_resolved);
        }
        assert!(matches!(
            lq_error(&out, &inst, Exponent::Infinite, 4),
            Err(Error::ResolutionTooSmall { .. })
        ));
    }

    #[test]
    fn lq_error_vanishes_for_exact_output() {
        let sp = spec(3, Some(2), Some(2), 1, 1);
        let inst = polynomial_instance(3, 1, 1, 4);
        let (out, _) = run_deterministic(&sp, 64, &inst).unwrap();
        let e = lq_error(&out, &inst, Exponent::integer(2), 256).unwrap();
        assert!(e.value < 1e-12);
    }

    #[test]
    fn lq_error_is_stable_under_refinement() {
        let sp = spec(1, None, None, 1, 1);
        let inst = smooth_instance(1, 1);
        let (out, _) = run_deterministic(&sp, 256, &inst).unwrap();
        let a = lq_error(&out, &inst, Exponent::integer(2), 64).unwrap().value;
        let b = lq_error(&out, &inst, Exponent::integer(2), 640).unwrap().value;
        assert!((a - b).abs() < 0.02 * b);
    }

    #[test]
    fn grid_norm_triangle_and_homogeneity() {
        let f = |s: &[f64]| (7.0 * s[0]).sin();
        let g = |s: &[f64]| s[0] * s[0] - 0.3;
        for q in [Exponent::integer(1), Exponent::integer(3), Exponent::Infinite] {
            let nf = grid_norm(&f, 1, q, 100);
            let ng = grid_norm(&g, 1, q, 100);
            let nsum = grid_norm(&|s: &[f64]| f(s) + g(s), 1, q, 100);
            assert!(nsum <= nf + ng + 1e-12);
            let scaled = grid_norm(&|s: &[f64]| -2.5 * f(s), 1, q, 100);
            assert!((scaled - 2.5 * nf).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_runner_has_zero_stderr() {
        let sp = spec(2, Some(2), Some(2), 1, 1);
        let inst = smooth_instance(1, 1);
        let est = expected_error(|_| run_deterministic(&sp, 64, &inst), &inst, Exponent::integer(2), 2.0, 4, 0).unwrap();
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.mean, est.errors[0]);
    }

    #[test]
    fn zero_instance_has_zero_error() {
        let sp = spec(1, Some(4), None, 1, 1);
        let inst = zero_instance(1, 1);
        for alg in [Algorithm::A4, Algorithm::A5] {
            let est = expected_error(
                |s| run(alg, &sp, 64, &inst, s, &RunOptions::default()),
                &inst,
                Exponent::Infinite,
                2.0,
                3,
                1,
            )
            .unwrap();
            assert_eq!(est.mean, 0.0);
        }
    }

    #[test]
    fn jackknife_scales_like_inverse_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ratio = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let a: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
            ratio += moment_jackknife(&a, 2.0).1 / moment_jackknife(&b, 2.0).1;
        }
        let ratio = ratio / trials as f64;
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }
}

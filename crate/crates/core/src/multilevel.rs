//! Multilevel randomized algorithms for `Sf(s) = ∫ f(s,t) dt`.
//!
//! The output is an exact coarse term, the parametric integral of the
//! shifted level-`l0` interpolant, plus one Monte Carlo estimated detail
//! term per level `l0 <= l < l1`. Each detail is the vector of row means of
//! the tensor `U_l f`, whose rows are indexed by a parameter cell and a
//! level-one basis function and whose columns run over integration cells.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::discrete_mean::{mc_mean_adaptive_seeded, mc_mean_nonadaptive_seeded, ValueTensor};
use crate::error::{Error, Result};
use crate::integrand::Integrand;
use crate::interpolation::{
    draw_shift, level_interpolate, DetailFrame, LagrangeBasis, PiecewisePoly, ShiftMode,
};
use crate::partition::{anchor_into, cell_count, cell_coords, join_index, locate_axis, split_index};
use crate::problem::ProblemSpec;
use crate::rates::{self, to_f64, Derived};

/// Which estimator a schedule is built for. The damping exponent of the
/// per-level budgets depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Det,
    A4,
    A5,
}

/// Tunable constants of the randomized algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Multiplies every per-level budget `n_l`. Used to match evaluation
    /// counts between algorithms.
    pub budget_scale: f64,
    /// Constant in `m_l = ⌈c1 log(N1 + N2)⌉`.
    pub c1: f64,
    /// Overrides the automatic damping exponent.
    pub damping: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            budget_scale: 1.0,
            c1: 1.0,
            damping: None,
        }
    }
}

/// Level range and per-level budgets for total budget `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub n: u64,
    pub l0: u32,
    pub l1: u32,
    /// Budgets for levels `l0..l1`.
    pub n_l: Vec<u64>,
    pub damping: f64,
    pub sigma1: bool,
}

/// `l0 = d1 ⌈log n / (d1 (d1 + d2))⌉`, i.e. the least multiple `l0 = d1 a`
/// with `2^{(d1+d2) l0} >= n`.
fn l0_of(n: u64, d1: u32, d2: u32) -> u32 {
    let step = (d1 * (d1 + d2)) as u64;
    let mut a = 0u32;
    while (a as u64) * step < 64 && (1u64 << (a as u64 * step)) < n {
        a += 1;
    }
    d1 * a
}

/// `l1 = ⌈((d1 + d2) l0 - σ1 log l0) / d1⌉`.
fn l1_of(l0: u32, d1: u32, d2: u32, sigma1: bool) -> u32 {
    let num = (d1 + d2) * l0;
    if !sigma1 || l0 <= 1 {
        return num.div_ceil(d1);
    }
    let x = (num as f64 - (l0 as f64).log2()) / d1 as f64;
    (x - 1e-9).ceil().max(0.0) as u32
}

/// Least budget for which `2 <= l0 < l1`.
pub fn min_budget(spec: &ProblemSpec) -> u64 {
    let sigma1 = rates::sigma1(spec);
    (2u64..)
        .find(|&n| {
            let l0 = l0_of(n, spec.d1, spec.d2);
            l0 >= 2 && l0 < l1_of(l0, spec.d1, spec.d2, sigma1)
        })
        .expect("some budget is admissible")
}

/// Damping exponent for the non-adaptive algorithm: half of the slack that
/// keeps the level error terms strictly monotone, 0 on the boundary case.
fn damping_nonadaptive(spec: &ProblemSpec) -> f64 {
    let x = Derived::new(spec);
    let r = spec.r as f64;
    let d1 = to_f64(x.d1);
    let slope = -r + (to_f64(x.pq_plus) + 1.0 - to_f64(x.inv_p_bar)) * d1;
    let weight = 1.0 - to_f64(x.inv_p_bar);
    if slope == 0.0 || rates::beta1(spec) {
        0.0
    } else if weight == 0.0 {
        1.0
    } else {
        0.5 * slope.abs() / weight
    }
}

/// Damping exponent for the adaptive algorithm. The two error terms have
/// exponents `γ_i(l) + w_i δ min(l - l0, l1 - l)` with `γ_i` affine in `l`.
/// The dominant term must stay strictly monotone and the other must stay
/// below the dominant endpoint.
fn damping_adaptive(spec: &ProblemSpec) -> f64 {
    if rates::beta2(spec) {
        return 0.0;
    }
    let x = Derived::new(spec);
    let r = spec.r as f64;
    let (d1, d2) = (to_f64(x.d1), to_f64(x.d2));
    let d = d1 + d2;
    let (ip, iq) = (to_f64(x.inv_p), to_f64(x.inv_q));
    // Endpoint values per unit l0 and slopes in l.
    let g1 = [-r + (ip - iq) * d1 - (1.0 - ip) * d2, -r * d / d1 + (ip - iq) * d];
    let g2 = [-r - d2 / 2.0, -r * d / d1];
    let slopes = [-r + (1.0 - iq) * d1, -r + d1 / 2.0];
    let weights = [1.0 - ip, 0.5];
    let maxes = [g1[0].max(g1[1]), g2[0].max(g2[1])];
    let top = maxes[0].max(maxes[1]);
    let mut bound = f64::INFINITY;
    for i in 0..2 {
        let b = if (maxes[i] - top).abs() < 1e-12 {
            slopes[i].abs() / weights[i]
        } else {
            (top - maxes[i]) / (weights[i] * d2 / (2.0 * d1) + 1.0)
        };
        bound = bound.min(b);
    }
    if bound.is_finite() {
        0.5 * bound
    } else {
        0.0
    }
}

impl Schedule {
    pub fn new(n: u64, spec: &ProblemSpec, algorithm: Algorithm, opts: &RunOptions) -> Result<Self> {
        let n0 = min_budget(spec);
        if n < n0 {
            return Err(Error::BudgetBelowMinimum { n, n0 });
        }
        let sigma1 = rates::sigma1(spec);
        let l0 = l0_of(n, spec.d1, spec.d2);
        let l1 = l1_of(l0, spec.d1, spec.d2, sigma1);
        let damping = opts.damping.unwrap_or(match algorithm {
            Algorithm::A5 => damping_adaptive(spec),
            _ => damping_nonadaptive(spec),
        });
        let d = (spec.d1 + spec.d2) as f64;
        let n_l = (l0..l1)
            .map(|l| {
                let m = (l - l0).min(l1 - l) as f64;
                let v = opts.budget_scale * (d * l0 as f64 - damping * m).exp2();
                (v.ceil() as u64).max(1)
            })
            .collect();
        Ok(Self {
            n,
            l0,
            l1,
            n_l,
            damping,
            sigma1,
        })
    }

    pub fn levels(&self) -> impl Iterator<Item = (u32, u64)> + '_ {
        (self.l0..self.l1).zip(self.n_l.iter().copied())
    }
}

/// Repetition count `m_l = ⌈c1 log(N1 + N2)⌉` of the adaptive estimator.
pub fn repetitions(frame: &DetailFrame, d1: u32, d2: u32, level: u32, c1: f64) -> usize {
    let n1 = frame.kappa1() as f64 * (d1 as f64 * level as f64).exp2();
    let n2 = (d2 as f64 * level as f64).exp2();
    ((c1 * (n1 + n2).log2()).ceil() as usize).max(1)
}

const SHARDS: usize = 64;

/// The tensor `U_l f` with entries `((i1, j), i2)` computed on demand. Row
/// `i1 κ' + j`, column `i2`. Every call to `f` is counted.
pub struct UTensor<'a, F: ?Sized> {
    frame: &'a DetailFrame,
    f: &'a F,
    level: u32,
    d1: usize,
    d2: usize,
    calls: AtomicU64,
    cache: Option<Vec<Mutex<HashMap<(usize, usize), f64>>>>,
}

impl<'a, F: Integrand + ?Sized> UTensor<'a, F> {
    pub fn new(frame: &'a DetailFrame, level: u32, d1: usize, d2: usize, f: &'a F) -> Self {
        Self {
            frame,
            f,
            level,
            d1,
            d2,
            calls: AtomicU64::new(0),
            cache: None,
        }
    }

    /// Remembers computed entries so that repeated reads cost no new
    /// evaluations of `f`.
    pub fn cached(mut self) -> Self {
        self.cache = Some((0..SHARDS).map(|_| Mutex::new(HashMap::new())).collect());
        self
    }

    /// Number of calls to `f` so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn compute(&self, row: usize, col: usize) -> f64 {
        let kappa1 = self.frame.kappa1();
        let (i1, j) = (row / kappa1, row % kappa1);
        let cell = join_index(i1, col, self.level, self.d2);
        let d = self.d1 + self.d2;
        let mut anchor = [0.0f64; crate::interpolation::MAX_DIM];
        anchor_into(self.level, cell, &mut anchor[..d]);
        let h = (-(self.level as f64)).exp2();
        let (v, c) = self.frame.apply_row(j, &anchor[..d], h, self.f);
        self.calls.fetch_add(c, Ordering::Relaxed);
        v
    }
}

impl<F: Integrand + ?Sized> ValueTensor for UTensor<'_, F> {
    fn n1(&self) -> usize {
        self.frame.kappa1() * cell_count(self.level, self.d1)
    }

    fn n2(&self) -> usize {
        cell_count(self.level, self.d2)
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.cache {
            None => self.compute(i, j),
            Some(shards) => {
                let shard = &shards[i % SHARDS];
                if let Some(&v) = shard.lock().unwrap().get(&(i, j)) {
                    return v;
                }
                let v = self.compute(i, j);
                shard.lock().unwrap().insert((i, j), v);
                v
            }
        }
    }
}

/// `θ_j = ∫ ψ_j(·, t) dt` for the level-one detail basis, stored as the
/// parameter half-cell it lives on, its Lagrange index in `s`, and a factor.
#[derive(Debug, Clone)]
pub struct ThetaTable {
    basis_s: LagrangeBasis,
    d1: usize,
    kappa1: usize,
    /// `(half cell, js, factor)` per `j`.
    entries: Vec<(usize, usize, f64)>,
}

impl ThetaTable {
    pub fn new(basis: &LagrangeBasis, d1: usize, d2: usize) -> Result<Self> {
        if d1 + d2 != basis.dim() {
            return Err(Error::LengthMismatch {
                expected: basis.dim(),
                got: d1 + d2,
            });
        }
        let kappa = basis.kappa();
        let n = basis.per_axis();
        let kappa_t = n.pow(d2 as u32);
        let w = basis.integral_weights();
        let scale = (-(d2 as f64)).exp2();
        let entries = (0..kappa << (d1 + d2))
            .map(|j| {
                let (i0, j0) = (j / kappa, j % kappa);
                let (h, _) = split_index(i0, 1, d1, d2).expect("in range");
                let (js, mut jt) = (j0 / kappa_t, j0 % kappa_t);
                let mut factor = scale;
                for _ in 0..d2 {
                    factor *= w[jt % n];
                    jt /= n;
                }
                (h, js, factor)
            })
            .collect();
        Ok(Self {
            basis_s: basis.in_dim(d1),
            d1,
            kappa1: kappa << (d1 + d2),
            entries,
        })
    }

    pub fn kappa1(&self) -> usize {
        self.kappa1
    }

    /// `θ_j(s)` on `[0,1]^{d1}`.
    pub fn eval(&self, j: usize, s: &[f64]) -> f64 {
        let (h, js, factor) = self.entries[j];
        let hd = cell_coords(1, h, self.d1).expect("in range");
        let mut u = Vec::with_capacity(self.d1);
        for (a, &x) in s.iter().enumerate() {
            if locate_axis(1, x) != hd[a] {
                return 0.0;
            }
            u.push(2.0 * x - hd[a] as f64);
        }
        factor * self.basis_s.phi(js, &u)
    }
}

/// `V_l g = Σ_{i1, j} g(i1, j) θ_{l i1 j}`, returned as a piecewise
/// polynomial on the level-`l+1` parameter cells.
pub fn v_operator(g: &[f64], level: u32, theta: &ThetaTable) -> Result<PiecewisePoly> {
    let d1 = theta.d1;
    let kappa1 = theta.kappa1;
    let cells = cell_count(level, d1);
    if g.len() != kappa1 * cells {
        return Err(Error::LengthMismatch {
            expected: kappa1 * cells,
            got: g.len(),
        });
    }
    let mut out = PiecewisePoly::zero(theta.basis_s.clone(), level + 1);
    let ks = theta.basis_s.kappa();
    let fine = level as usize + 1;
    for i1 in 0..cells {
        let c = cell_coords(level, i1, d1).expect("in range");
        for (j, &(h, js, factor)) in theta.entries.iter().enumerate() {
            let v = g[i1 * kappa1 + j];
            if v == 0.0 {
                continue;
            }
            let mut child = 0usize;
            for (a, &ca) in c.iter().enumerate() {
                let ha = (h >> (d1 - 1 - a)) & 1;
                child = (child << fine) | (2 * ca + ha);
            }
            out.coeffs[child * ks + js] += v * factor;
        }
    }
    Ok(out)
}

/// The exact parametric integral of the shifted level-`l0` interpolant of
/// `f`, as a piecewise polynomial in `s`, with the number of samples.
pub fn base_term<F: Integrand + ?Sized>(
    basis: &LagrangeBasis,
    d1: usize,
    d2: usize,
    l0: u32,
    rho: &[f64],
    f: &F,
) -> (PiecewisePoly, u64) {
    let interp = level_interpolate(basis, l0, rho, f);
    let basis_s = basis.in_dim(d1);
    let ks = basis_s.kappa();
    let kappa = basis.kappa();
    let n = basis.per_axis();
    let kappa_t = n.pow(d2 as u32);
    let w = basis.integral_weights();
    let wt: Vec<f64> = (0..kappa_t)
        .map(|mut jt| {
            let mut p = 1.0;
            for _ in 0..d2 {
                p *= w[jt % n];
                jt /= n;
            }
            p
        })
        .collect();
    let n2 = cell_count(l0, d2);
    let scale = 1.0 / n2 as f64;
    let mut out = PiecewisePoly::zero(basis_s, l0);
    out.coeffs
        .par_chunks_mut(ks)
        .enumerate()
        .for_each(|(i1, o)| {
            for i2 in 0..n2 {
                let c = interp.poly.cell_coeffs(join_index(i1, i2, l0, d2));
                for (js, oj) in o.iter_mut().enumerate() {
                    let row = &c[js * kappa_t..(js + 1) * kappa_t];
                    *oj += row.iter().zip(&wt).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            for oj in o.iter_mut() {
                *oj *= scale;
            }
        });
    debug_assert_eq!(interp.evaluations as usize, kappa * cell_count(l0, d1 + d2));
    (out, interp.evaluations)
}

/// The estimated detail of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDetail {
    pub level: u32,
    /// Estimated row means of `U_l f`, indexed `i1 κ' + j`.
    pub coeffs: Vec<f64>,
    /// `V_l` applied to `coeffs`, on level `l + 1`.
    pub poly: PiecewisePoly,
}

/// An approximation of `Sf` on `[0,1]^{d1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelOutput {
    pub base: PiecewisePoly,
    pub details: Vec<LevelDetail>,
}

impl MultilevelOutput {
    pub fn dim(&self) -> usize {
        self.base.basis.dim()
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.base.eval(s) + self.details.iter().map(|d| d.poly.eval(s)).sum::<f64>()
    }

    /// `self += a * other`. Both outputs must share their level structure.
    pub fn scaled_add(&mut self, a: f64, other: &MultilevelOutput) {
        assert_eq!(self.details.len(), other.details.len());
        self.base.scaled_add(a, &other.base);
        for (x, y) in self.details.iter_mut().zip(&other.details) {
            assert_eq!(x.level, y.level);
            for (c, v) in x.coeffs.iter_mut().zip(&y.coeffs) {
                *c += a * v;
            }
            x.poly.scaled_add(a, &y.poly);
        }
    }

    /// Finest level carrying a polynomial piece.
    pub fn finest_level(&self) -> u32 {
        self.details
            .iter()
            .map(|d| d.poly.level)
            .max()
            .unwrap_or(0)
            .max(self.base.level)
    }

    /// Sums every term into one piecewise polynomial on the finest level.
    pub fn flatten(&self) -> PiecewisePoly {
        let top = self.finest_level();
        let mut out = self.base.refine_to(top);
        for d in &self.details {
            out.scaled_add(1.0, &d.poly.refine_to(top));
        }
        out
    }
}

/// Evaluation counts of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CardinalityLedger {
    pub base_evals: u64,
    /// Calls to `f` per detail level.
    pub per_level_evals: Vec<u64>,
    /// Distinct tensor entries read per detail level.
    pub per_level_entries: Vec<u64>,
    pub total: u64,
}

impl CardinalityLedger {
    /// `κ 2^{(d1+d2) l0} + κ'' Σ_l card(A_l)`.
    pub fn bound(&self, kappa2: usize) -> u64 {
        self.base_evals + kappa2 as u64 * self.per_level_entries.iter().sum::<u64>()
    }
}

/// Seed of independent stream `k` of the master seed.
fn stream_seed(master: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(k);
    rng.next_u64()
}

fn run_randomized<F: Integrand + ?Sized>(
    spec: &ProblemSpec,
    n: u64,
    f: &F,
    seed: u64,
    algorithm: Algorithm,
    opts: &RunOptions,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    spec.require_solvable()?;
    let (d1, d2) = (spec.d1 as usize, spec.d2 as usize);
    let d = d1 + d2;
    if f.dim() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: f.dim(),
        });
    }
    let schedule = Schedule::new(n, spec, algorithm, opts)?;
    let basis = LagrangeBasis::new(spec.r, d)?;
    let mut shift_rng = ChaCha8Rng::seed_from_u64(seed);
    shift_rng.set_stream(0);
    let rho = draw_shift(ShiftMode::Uniform, d, &mut shift_rng);

    let (base, base_evals) = base_term(&basis, d1, d2, schedule.l0, &rho, f);
    let frame = DetailFrame::new(&basis, &rho);
    let theta = ThetaTable::new(&basis, d1, d2)?;

    let mut details = Vec::with_capacity(schedule.n_l.len());
    let mut per_level_evals = Vec::with_capacity(schedule.n_l.len());
    let mut per_level_entries = Vec::with_capacity(schedule.n_l.len());
    for (level, nl) in schedule.levels() {
        let level_seed = stream_seed(seed, level as u64 + 1);
        let u = UTensor::new(&frame, level, d1, d2, f);
        let est = match algorithm {
            Algorithm::A4 => mc_mean_nonadaptive_seeded(&u, nl, level_seed)?,
            Algorithm::A5 => {
                let u = u.cached();
                let m = repetitions(&frame, spec.d1, spec.d2, level, opts.c1);
                let est = mc_mean_adaptive_seeded(&u, nl, m, spec.p, level_seed)?;
                per_level_evals.push(u.calls());
                per_level_entries.push(est.eval_count);
                let poly = v_operator(&est.row_means, level, &theta)?;
                details.push(LevelDetail {
                    level,
                    coeffs: est.row_means,
                    poly,
                });
                continue;
            }
            Algorithm::Det => unreachable!("deterministic runs have no details"),
        };
        per_level_evals.push(u.calls());
        per_level_entries.push(est.eval_count);
        let poly = v_operator(&est.row_means, level, &theta)?;
        details.push(LevelDetail {
            level,
            coeffs: est.row_means,
            poly,
        });
    }
    let total = base_evals + per_level_evals.iter().sum::<u64>();
    let ledger = CardinalityLedger {
        base_evals,
        per_level_evals,
        per_level_entries,
        total,
    };
    assert!(
        ledger.total <= ledger.bound(frame.kappa2()),
        "composite cardinality bound violated"
    );
    Ok((MultilevelOutput { base, details }, ledger))
}

/// Non-adaptive multilevel algorithm with a uniformly shifted grid.
pub fn run_a4<F: Integrand + ?Sized, R: RngCore + ?Sized>(
    spec: &ProblemSpec,
    n: u64,
    f: &F,
    rng: &mut R,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    run_a4_seeded(spec, n, f, rng.next_u64(), &RunOptions::default())
}

pub fn run_a4_seeded<F: Integrand + ?Sized>(
    spec: &ProblemSpec,
    n: u64,
    f: &F,
    seed: u64,
    opts: &RunOptions,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    run_randomized(spec, n, f, seed, Algorithm::A4, opts)
}

/// Adaptive multilevel algorithm, for `2 < p < q`.
pub fn run_a5<F: Integrand + ?Sized, R: RngCore + ?Sized>(
    spec: &ProblemSpec,
    n: u64,
    f: &F,
    rng: &mut R,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    run_a5_seeded(spec, n, f, rng.next_u64(), &RunOptions::default())
}

pub fn run_a5_seeded<F: Integrand + ?Sized>(
    spec: &ProblemSpec,
    n: u64,
    f: &F,
    seed: u64,
    opts: &RunOptions,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    if !rates::gap_regime(spec) {
        return Err(Error::GapRegime {
            p: spec.p.to_string(),
            q: spec.q.to_string(),
        });
    }
    run_randomized(spec, n, f, seed, Algorithm::A5, opts)
}

/// Single-level deterministic algorithm: the exact parametric integral of
/// the unshifted level-`l0` interpolant, `l0 = ⌈log n / (d1 + d2)⌉`.
pub fn run_deterministic<F: Integrand + ?Sized>(
    spec: &ProblemSpec,
    n: u64,
    f: &F,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    if n == 0 {
        return Err(Error::EmptyBudget);
    }
    let d = spec.d1 + spec.d2;
    if !rates::embedding_check(spec.r, spec.p, d) {
        return Err(Error::EmbeddingRequired);
    }
    let mut l0 = 0u32;
    while (l0 as u64 * d as u64) < 63 && (1u64 << (l0 * d)) < n {
        l0 += 1;
    }
    let basis = LagrangeBasis::new(spec.r, d as usize)?;
    let rho = vec![0.0; d as usize];
    let (base, base_evals) = base_term(&basis, spec.d1 as usize, spec.d2 as usize, l0, &rho, f);
    Ok((
        MultilevelOutput {
            base,
            details: Vec::new(),
        },
        CardinalityLedger {
            base_evals,
            per_level_evals: Vec::new(),
            per_level_entries: Vec::new(),
            total: base_evals,
        },
    ))
}

/// Runs `algorithm` with the given seed. The seed is ignored by the
/// deterministic algorithm.
pub fn run<F: Integrand + ?Sized>(
    algorithm: Algorithm,
    spec: &ProblemSpec,
    n: u64,
    f: &F,
    seed: u64,
    opts: &RunOptions,
) -> Result<(MultilevelOutput, CardinalityLedger)> {
    match algorithm {
        Algorithm::Det => run_deterministic(spec, n, f),
        Algorithm::A4 => run_a4_seeded(spec, n, f, seed, opts),
        Algorithm::A5 => run_a5_seeded(spec, n, f, seed, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete_mean::exact_mean;
    use crate::integrand::{CountingIntegrand, FnIntegrand};
    use crate::interpolation::detail_apply;
    use crate::problem::{Exponent, Rational};
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(r: u32, p: Option<i64>, q: Option<i64>, d1: u32, d2: u32) -> ProblemSpec {
        ProblemSpec::from_ints(r, p, q, d1, d2).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = Schedule::new(16, &spec(1, Some(2), Some(2), 1, 1), Algorithm::A4, &RunOptions {
            damping: Some(0.0),
            ..Default::default()
        })
        .unwrap();
        assert_eq!((s.l0, s.l1), (2, 4));
        assert_eq!(s.n_l, vec![16, 16]);

        let s = Schedule::new(256, &spec(1, None, None, 1, 1), Algorithm::A4, &RunOptions::default()).unwrap();
        assert!(s.sigma1);
        assert_eq!((s.l0, s.l1), (4, 6));
    }

    #[test]
    fn minimal_budget() {
        let sp = spec(1, Some(2), Some(2), 1, 1);
        let n0 = min_budget(&sp);
        assert_eq!(n0, 5);
        assert_eq!(
            Schedule::new(4, &sp, Algorithm::A4, &RunOptions::default()),
            Err(Error::BudgetBelowMinimum { n: 4, n0: 5 })
        );
        assert_eq!(min_budget(&spec(1, Some(2), Some(2), 2, 1)), 2);
    }

    #[test]
    fn damping_vanishes_on_boundary_cases() {
        // r/d1 = 1 - 1/2 + 0 with p = q = 2.
        let b1 = ProblemSpec::new(1, Exponent::integer(2), Exponent::integer(2), 2, 1).unwrap();
        assert!(rates::beta1(&b1));
        assert_eq!(damping_nonadaptive(&b1), 0.0);
        let gap = spec(1, Some(4), None, 1, 1);
        assert!(rates::beta2(&gap));
        assert_eq!(damping_adaptive(&gap), 0.0);
        assert!(damping_nonadaptive(&spec(2, Some(2), Some(2), 1, 1)) > 0.0);
        assert!(damping_adaptive(&spec(3, Some(4), None, 1, 2)) > 0.0);
    }

    proptest! {
        #[test]
        fn schedule_invariants(n in 5u64..1u64 << 40, d1 in 1u32..3, d2 in 1u32..3, inf in any::<bool>()) {
            let sp = if inf { spec(2, None, None, d1, d2) } else { spec(2, Some(2), Some(3), d1, d2) };
            prop_assume!(n >= min_budget(&sp));
            let s = Schedule::new(n, &sp, Algorithm::A4, &RunOptions::default()).unwrap();
            prop_assert!(2 <= s.l0 && s.l0 < s.l1);
            let d = (d1 + d2) as f64;
            prop_assert!((n as f64).powf(1.0 / d) <= (s.l0 as f64).exp2() * (1.0 + 1e-12));
            prop_assert!((s.l0 as f64).exp2() <= 2f64.powf(d1 as f64) * (n as f64).powf(1.0 / d) * 2.0);
            prop_assert_eq!(s.n_l.len(), (s.l1 - s.l0) as usize);
            let top = (d * s.l0 as f64).exp2();
            for &nl in &s.n_l {
                prop_assert!(nl as f64 <= top.ceil());
            }
        }
    }

    fn smooth(d1: usize, d2: usize) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| {
            let s: f64 = x[..d1].iter().map(|v| (1.3 * v + 0.2).sin()).product();
            let t: f64 = x[d1..d1 + d2].iter().map(|v| (0.7 * v).exp()).product();
            s * t + x[0] * x[d1]
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let basis = LagrangeBasis::new(2, 2).unwrap();
        let frame = DetailFrame::new(&basis, &[0.3, 0.8]);
        let f = FnIntegrand::new(2, |_: &[f64]| 2.5);
        let u = UTensor::new(&frame, 2, 1, 1, &f);
        for i in 0..u.n1() {
            for j in 0..u.n2() {
                assert!(u.entry(i, j).abs() < 1e-13);
            }
        }
    }

    /// `S P'_l f` must equal `V_l` of the exact row means of `U_l f`.
    #[test]
    fn decomposition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for r in 1..=3 {
            for &(d1, d2) in &[(1usize, 1usize), (1, 2), (2, 1)] {
                let d = d1 + d2;
                let basis = LagrangeBasis::new(r, d).unwrap();
                let rho: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                let frame = DetailFrame::new(&basis, &rho);
                let theta = ThetaTable::new(&basis, d1, d2).unwrap();
                let f = FnIntegrand::new(d, smooth(d1, d2));
                let l = 2;
                let u = UTensor::new(&frame, l, d1, d2, &f);
                let v = v_operator(&exact_mean(&u).row_means, l, &theta).unwrap();
                // Reference: integrate the detail expansion over t by a
                // Gauss rule per cell, exact for the polynomial pieces.
                let det = detail_apply(&frame, l, &f);
                let (gx, gw) = gauss_legendre(8);
                let fine = 1usize << (l + 1);
                for k in 0..32 {
                    let s: Vec<f64> = (0..d1).map(|a| ((k * (a + 3)) % 32) as f64 / 32.0 + 0.013).collect();
                    let mut acc = 0.0;
                    let mut idx = vec![0usize; d2];
                    loop {
                        let mut t = vec![0.0; d2];
                        let mut w = 1.0;
                        let mut cell = vec![0usize; d2];
                        let mut rest = idx.clone();
                        for b in 0..d2 {
                            cell[b] = rest[b] / gx.len();
                            rest[b] %= gx.len();
                            t[b] = (cell[b] as f64 + gx[rest[b]]) / fine as f64;
                            w *= gw[rest[b]] / fine as f64;
                        }
                        let mut x = s.clone();
                        x.extend(&t);
                        acc += w * det.eval(&x);
                        let mut b = d2;
                        loop {
                            if b == 0 {
                                break;
                            }
                            b -= 1;
                            idx[b] += 1;
                            if idx[b] < fine * gx.len() {
                                break;
                            }
                            idx[b] = 0;
                        }
                        if idx.iter().all(|&i| i == 0) {
                            break;
                        }
                    }
                    assert!((acc - v.eval(&s)).abs() < 1e-9, "r={r} d1={d1} d2={d2}: {acc} vs {}", v.eval(&s));
                }
            }
        }
    }

    /// Gauss-Legendre nodes and weights on `[0,1]`.
    fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; m];
        let mut w = vec![0.0; m];
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=m {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    let dp = {
                        let (mut p0, mut p1) = (1.0, z);
                        for k in 2..=m {
                            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                            p0 = p1;
                            p1 = p2;
                        }
                        m as f64 * (z * p1 - p0) / (z * z - 1.0)
                    };
                    x[i] = 0.5 * (1.0 - z);
                    w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
                    break;
                }
            }
        }
        (x, w)
    }

    #[test]
    fn theta_for_piecewise_constants() {
        // r = 1: ψ_j are indicators of the four level-one cells.
        let basis = LagrangeBasis::new(1, 2).unwrap();
        let th = ThetaTable::new(&basis, 1, 1).unwrap();
        assert_eq!(th.kappa1(), 4);
        for j in 0..4 {
            let lo = th.eval(j, &[0.25]);
            let hi = th.eval(j, &[0.75]);
            let expect = if j < 2 { (0.5, 0.0) } else { (0.0, 0.5) };
            assert_eq!((lo, hi), expect, "j = {j}");
        }
    }

    #[test]
    fn v_operator_unit_vector() {
        let basis = LagrangeBasis::new(2, 2).unwrap();
        let th = ThetaTable::new(&basis, 1, 1).unwrap();
        let l = 2;
        let mut g = vec![0.0; th.kappa1() * 4];
        let (i1, j) = (1, 5);
        g[i1 * th.kappa1() + j] = 1.0;
        let v = v_operator(&g, l, &th).unwrap();
        for k in 0..64 {
            let s = (k as f64 + 0.5) / 64.0;
            let inside = (s * 4.0).floor() as usize == i1;
            let expect = if inside { th.eval(j, &[s * 4.0 - i1 as f64]) } else { 0.0 };
            assert!((v.eval(&[s]) - expect).abs() < 1e-14);
        }
        assert!(v_operator(&g[1..], l, &th).is_err());
    }

    #[test]
    fn base_term_of_polynomial_is_exact() {
        // Max coordinate degree r - 1 = 2.
        let f = FnIntegrand::new(2, |x: &[f64]| 1.0 + x[0] * x[0] * x[1] - 3.0 * x[1] * x[1]);
        let sf = |s: f64| 1.0 + s * s / 2.0 - 1.0;
        let basis = LagrangeBasis::new(3, 2).unwrap();
        let (b, evals) = base_term(&basis, 1, 1, 2, &[0.4, 0.9], &f);
        assert_eq!(evals, 9 * 16);
        for k in 0..50 {
            let s = k as f64 / 49.0;
            assert!((b.eval(&[s]) - sf(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn base_term_piecewise_constant_by_hand() {
        // r = 1: the cell value is f at the shifted node averaged over the
        // t-cells of the same s-cell.
        let f = FnIntegrand::new(2, |x: &[f64]| x[0] + 10.0 * x[1] * x[1]);
        let basis = LagrangeBasis::new(1, 2).unwrap();
        let rho = [0.5, 0.25];
        let (b, _) = base_term(&basis, 1, 1, 2, &rho, &f);
        let (ds, dt) = (0.5 * rho[0] / 4.0, 0.5 * rho[1] / 4.0);
        let s = 0.25 + ds;
        let expect: f64 = (0..4)
            .map(|i2| s + 10.0 * (i2 as f64 / 4.0 + dt).powi(2))
            .sum::<f64>()
            / 4.0;
        assert!((b.eval(&[0.3]) - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_function_gives_zero_output() {
        let sp = spec(2, Some(4), None, 1, 1);
        let f = FnIntegrand::new(2, |_: &[f64]| 0.0);
        for seed in 0..3 {
            for alg in [Algorithm::A4, Algorithm::A5] {
                let (out, _) = run(alg, &sp, 64, &f, seed, &RunOptions::default()).unwrap();
                assert!(out.base.coeffs.iter().all(|&c| c == 0.0));
                assert!(out.details.iter().all(|d| d.coeffs.iter().all(|&c| c == 0.0)));
            }
        }
    }

    #[test]
    fn polynomials_are_reproduced() {
        let sp = spec(2, Some(4), None, 1, 1);
        let f = FnIntegrand::new(2, |x: &[f64]| 0.5 - x[0] + 2.0 * x[0] * x[1] + x[1]);
        let sf = |s: f64| 0.5 - s + s + 0.5;
        for seed in 0..3 {
            for alg in [Algorithm::A4, Algorithm::A5] {
                let (out, _) = run(alg, &sp, 64, &f, seed, &RunOptions::default()).unwrap();
                for k in 0..40 {
                    let s = k as f64 / 39.0;
                    assert!((out.eval(&[s]) - sf(s)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ledger_matches_counting_wrapper() {
        let sp = spec(2, Some(4), Some(8), 1, 1);
        let f = CountingIntegrand::new(FnIntegrand::new(2, smooth(1, 1)));
        for alg in [Algorithm::A4, Algorithm::A5] {
            f.reset();
            let (_, ledger) = run(alg, &sp, 256, &f, 11, &RunOptions::default()).unwrap();
            assert_eq!(ledger.total, f.calls(), "{alg:?}");
            assert!(ledger.total <= ledger.bound(2 * 4));
            assert_eq!(ledger.base_evals, 4 * 256);
        }
    }

    #[test]
    fn adaptive_entry_counts_respect_cap() {
        let sp = spec(1, Some(4), None, 1, 1);
        let f = FnIntegrand::new(2, smooth(1, 1));
        let opts = RunOptions::default();
        let s = Schedule::new(256, &sp, Algorithm::A5, &opts).unwrap();
        let (_, ledger) = run_a5_seeded(&sp, 256, &f, 3, &opts).unwrap();
        let basis = LagrangeBasis::new(1, 2).unwrap();
        let frame = DetailFrame::new(&basis, &[0.0, 0.0]);
        for ((l, nl), &c) in s.levels().zip(&ledger.per_level_entries) {
            let m = repetitions(&frame, 1, 1, l, 1.0) as u64;
            assert!(c <= 6 * m * nl);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let sp = spec(1, Some(2), Some(2), 1, 1);
        let f = FnIntegrand::new(2, smooth(1, 1));
        let a = run_a4_seeded(&sp, 128, &f, 5, &RunOptions::default()).unwrap();
        let b = run_a4_seeded(&sp, 128, &f, 5, &RunOptions::default()).unwrap();
        assert_eq!(a, b);
        let c = run_a4_seeded(&sp, 128, &f, 6, &RunOptions::default()).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn argument_checks() {
        let f = FnIntegrand::new(2, |_: &[f64]| 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            run_a5(&spec(1, Some(2), Some(2), 1, 1), 64, &f, &mut rng),
            Err(Error::GapRegime { .. })
        ));
        let weak = ProblemSpec::new(1, Exponent::Finite(Rational::new(3, 2)), Exponent::integer(1), 1, 1).unwrap();
        assert_eq!(run_deterministic(&weak, 64, &f).unwrap_err(), Error::EmbeddingRequired);
        let g = FnIntegrand::new(3, |_: &[f64]| 1.0);
        assert!(run_a4(&spec(1, Some(2), Some(2), 1, 1), 64, &g, &mut rng).is_err());
    }

    #[test]
    fn deterministic_is_exact_on_polynomials_and_repeatable() {
        let sp = spec(2, Some(2), Some(2), 1, 1);
        let f = FnIntegrand::new(2, |x: &[f64]| 3.0 * x[0] * x[1] + x[1]);
        let (out, ledger) = run_deterministic(&sp, 100, &f).unwrap();
        assert_eq!(out.base.level, 4);
        assert_eq!(ledger.total, 4 * 256);
        for k in 0..20 {
            let s = k as f64 / 19.0;
            assert!((out.eval(&[s]) - (1.5 * s + 0.5)).abs() < 1e-12);
        }
        assert_eq!(run_deterministic(&sp, 100, &f).unwrap(), (out, ledger));
    }

    #[test]
    fn output_linearity_and_flatten() {
        let sp = spec(2, Some(2), Some(2), 1, 1);
        let f = FnIntegrand::new(2, smooth(1, 1));
        let g = FnIntegrand::new(2, |x: &[f64]| (3.0 * x[0] * x[1]).cos());
        let (a, _) = run_a4_seeded(&sp, 64, &f, 1, &RunOptions::default()).unwrap();
        let (b, _) = run_a4_seeded(&sp, 64, &g, 2, &RunOptions::default()).unwrap();
        let mut c = a.clone();
        c.scaled_add(-1.7, &b);
        let flat = a.flatten();
        for k in 0..50 {
            let s = [k as f64 / 49.0];
            assert!((c.eval(&s) - (a.eval(&s) - 1.7 * b.eval(&s))).abs() < 1e-12);
            assert!((flat.eval(&s) - a.eval(&s)).abs() < 1e-12);
        }
    }

    /// For fixed shift the estimated detail coefficients average to the
    /// exact row means.
    #[test]
    fn detail_estimates_are_unbiased() {
        let basis = LagrangeBasis::new(1, 2).unwrap();
        let frame = DetailFrame::new(&basis, &[0.3, 0.6]);
        let f = FnIntegrand::new(2, smooth(1, 1));
        let l = 2;
        let u = UTensor::new(&frame, l, 1, 1, &f);
        let exact = exact_mean(&u).row_means;
        let n1 = u.n1() as u64;
        let runs = 4000;
        let mut sum = vec![0.0; exact.len()];
        let mut sq = vec![0.0; exact.len()];
        for seed in 0..runs {
            let est = mc_mean_nonadaptive_seeded(&u, n1, seed).unwrap().row_means;
            for (i, v) in est.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..exact.len() {
            let m = sum[i] / runs as f64;
            let var = sq[i] / runs as f64 - m * m;
            if var < 1e-20 {
                assert!((m - exact[i]).abs() < 1e-12);
                continue;
            }
            let z = (m - exact[i]) / (var / runs as f64).sqrt();
            assert!(z.abs() < 4.5, "row {i}: z = {z}");
        }
    }
}

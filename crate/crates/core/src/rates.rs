//! Regime flags, rate functions and the adaptive speedup exponent, computed
//! in exact rational arithmetic so that branch boundaries are classified
//! without rounding.

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{Exponent, ProblemSpec, Rational};

fn rat(a: i64) -> Rational {
    Rational::from_integer(a)
}

fn half() -> Rational {
    Rational::new(1, 2)
}

fn pos(x: Rational) -> Rational {
    if x.is_negative() {
        Rational::zero()
    } else {
        x
    }
}

pub fn to_f64(x: Rational) -> f64 {
    x.to_f64().unwrap()
}

/// Exact derived quantities of a problem.
#[derive(Debug, Clone, Copy)]
pub struct Derived {
    pub r_over_d1: Rational,
    pub inv_p: Rational,
    pub inv_q: Rational,
    pub inv_p_bar: Rational,
    /// `(1/p - 1/q)_+`
    pub pq_plus: Rational,
    pub d1: Rational,
    pub d2: Rational,
}

impl Derived {
    pub fn new(spec: &ProblemSpec) -> Self {
        let inv_p = spec.p.inv();
        let inv_q = spec.q.inv();
        Self {
            r_over_d1: Rational::new(spec.r as i64, spec.d1 as i64),
            inv_p,
            inv_q,
            inv_p_bar: spec.p_bar().inv(),
            pq_plus: pos(inv_p - inv_q),
            d1: rat(spec.d1 as i64),
            d2: rat(spec.d2 as i64),
        }
    }

    fn d(&self) -> Rational {
        self.d1 + self.d2
    }
}

/// `W_p^r([0,1]^d)` embeds into `C([0,1]^d)`.
pub fn embedding_check(r: u32, p: Exponent, d: u32) -> bool {
    let rd = Rational::new(r as i64, d as i64);
    match p {
        Exponent::Finite(pv) if pv == Rational::one() => rd >= Rational::one(),
        _ => rd > p.inv(),
    }
}

/// `S` maps `W_p^r(D)` continuously into `L_q(D_1)`.
pub fn solvable_check(spec: &ProblemSpec) -> bool {
    let x = Derived::new(spec);
    if !spec.q.is_infinite() {
        x.r_over_d1 >= x.pq_plus
    } else if spec.p.is_infinite() || spec.p == Exponent::integer(1) {
        x.r_over_d1 >= x.inv_p
    } else {
        x.r_over_d1 > x.inv_p
    }
}

/// Compact embedding condition `r/d1 > (1/p - 1/q)_+`.
pub fn compact_check(spec: &ProblemSpec) -> bool {
    let x = Derived::new(spec);
    x.r_over_d1 > x.pq_plus
}

/// `2 < p < q`, where adaption can help.
pub fn gap_regime(spec: &ProblemSpec) -> bool {
    Exponent::integer(2).lt(&spec.p) && spec.p.lt(&spec.q)
}

pub fn sigma1(spec: &ProblemSpec) -> bool {
    spec.p.is_infinite() && spec.q.is_infinite()
}

/// The threshold `1 - 1/p̄ + (1/p - 1/q)_+` separating the two branches of `Φ1`.
pub fn phi1_threshold(spec: &ProblemSpec) -> Rational {
    let x = Derived::new(spec);
    Rational::one() - x.inv_p_bar + x.pq_plus
}

pub fn beta1(spec: &ProblemSpec) -> bool {
    Derived::new(spec).r_over_d1 == phi1_threshold(spec)
}

/// `(1/2 - 1/p) d2` compared with `(1/p - 1/q) d1`: `Greater` means the
/// integration dimension dominates.
fn b7_order(x: &Derived) -> std::cmp::Ordering {
    ((half() - x.inv_p) * x.d2).cmp(&((x.inv_p - x.inv_q) * x.d1))
}

/// `(1/p - 1/q)(d1/d2 + 1) + 1/2`.
fn c7_threshold(x: &Derived) -> Rational {
    (x.inv_p - x.inv_q) * (x.d1 / x.d2 + Rational::one()) + half()
}

pub fn beta2(spec: &ProblemSpec) -> bool {
    let x = Derived::new(spec);
    b7_order(&x) != std::cmp::Ordering::Greater && x.r_over_d1 == Rational::one() - x.inv_q
}

pub fn sigma2(spec: &ProblemSpec) -> bool {
    let x = Derived::new(spec);
    b7_order(&x) != std::cmp::Ordering::Less
        && x.r_over_d1 >= c7_threshold(&x)
        && spec.q.is_infinite()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi1Branch {
    /// Smoothness dominates: mixed exponent over `d1 + d2`.
    Mixed,
    /// Smoothness limited: exponent `-r/d1 + (1/p - 1/q)_+`.
    Parametric,
}

/// A rate of the form `n^exponent · log(n+1)^log_power`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate {
    pub exponent: Rational,
    pub log_power: Rational,
}

impl Rate {
    pub fn eval(&self, n: f64) -> f64 {
        n.powf(to_f64(self.exponent)) * (n + 1.0).log2().powf(to_f64(self.log_power))
    }
}

pub fn phi1_branch(spec: &ProblemSpec) -> Phi1Branch {
    if Derived::new(spec).r_over_d1 > phi1_threshold(spec) {
        Phi1Branch::Mixed
    } else {
        Phi1Branch::Parametric
    }
}

/// Exponents of the mixed and the parametric `Φ1` formulas, regardless of
/// which branch applies.
pub fn phi1_branch_exponents(spec: &ProblemSpec) -> (Rational, Rational) {
    let x = Derived::new(spec);
    let mixed = (-rat(spec.r as i64) + x.pq_plus * x.d1 - (Rational::one() - x.inv_p_bar) * x.d2) / x.d();
    (mixed, -x.r_over_d1 + x.pq_plus)
}

/// `Φ1` as an exact rate.
pub fn phi1_rate(spec: &ProblemSpec) -> Rate {
    let x = Derived::new(spec);
    let s1 = if sigma1(spec) { Rational::one() } else { Rational::zero() };
    let (mixed, parametric) = phi1_branch_exponents(spec);
    match phi1_branch(spec) {
        Phi1Branch::Mixed => Rate {
            exponent: mixed,
            log_power: s1 * half(),
        },
        Phi1Branch::Parametric => Rate {
            exponent: parametric,
            log_power: s1 * (x.r_over_d1 - x.pq_plus),
        },
    }
}

pub fn phi1(n: f64, spec: &ProblemSpec) -> f64 {
    phi1_rate(spec).eval(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi2Branch {
    /// `(1/2-1/p)d2 > (1/p-1/q)d1` and high smoothness: `n^{(-r-d2/2)/(d1+d2)}`.
    IntegrationHigh,
    /// `(1/2-1/p)d2 > (1/p-1/q)d1` and low smoothness: `n^{-r/d1+1/p-1/q}`.
    IntegrationLow,
    /// `(1/2-1/p)d2 <= (1/p-1/q)d1` and `r/d1 > 1-1/q`.
    ParameterHigh,
    /// `(1/2-1/p)d2 <= (1/p-1/q)d1` and `r/d1 <= 1-1/q`.
    ParameterLow,
}

pub fn phi2_branch(spec: &ProblemSpec) -> Result<Phi2Branch> {
    if !gap_regime(spec) {
        return Err(Error::GapRegime {
            p: spec.p.to_string(),
            q: spec.q.to_string(),
        });
    }
    let x = Derived::new(spec);
    Ok(if b7_order(&x) == std::cmp::Ordering::Greater {
        if x.r_over_d1 > c7_threshold(&x) {
            Phi2Branch::IntegrationHigh
        } else {
            Phi2Branch::IntegrationLow
        }
    } else if x.r_over_d1 > Rational::one() - x.inv_q {
        Phi2Branch::ParameterHigh
    } else {
        Phi2Branch::ParameterLow
    })
}

fn phi2_exponent_of(spec: &ProblemSpec, branch: Phi2Branch) -> Rational {
    let x = Derived::new(spec);
    let r = rat(spec.r as i64);
    match branch {
        Phi2Branch::IntegrationHigh => (-r - half() * x.d2) / x.d(),
        Phi2Branch::ParameterHigh => {
            (-r + (x.inv_p - x.inv_q) * x.d1 - (Rational::one() - x.inv_p) * x.d2) / x.d()
        }
        Phi2Branch::IntegrationLow | Phi2Branch::ParameterLow => {
            -x.r_over_d1 + x.inv_p - x.inv_q
        }
    }
}

/// `Φ2` as an exact rate (pure power).
pub fn phi2_rate(spec: &ProblemSpec) -> Result<Rate> {
    let b = phi2_branch(spec)?;
    Ok(Rate {
        exponent: phi2_exponent_of(spec, b),
        log_power: Rational::zero(),
    })
}

pub fn phi2(n: f64, spec: &ProblemSpec) -> Result<f64> {
    Ok(phi2_rate(spec)?.eval(n))
}

/// Exponents of the three candidate `Φ2` formulas, used to check that the
/// branch selection is continuous.
pub fn phi2_candidate_exponents(spec: &ProblemSpec) -> [Rational; 3] {
    [
        phi2_exponent_of(spec, Phi2Branch::IntegrationHigh),
        phi2_exponent_of(spec, Phi2Branch::ParameterHigh),
        phi2_exponent_of(spec, Phi2Branch::IntegrationLow),
    ]
}

/// The speedup exponent `θ` from the case table.
pub fn gap_exponent(spec: &ProblemSpec) -> Result<Rational> {
    if !gap_regime(spec) {
        return Err(Error::GapRegime {
            p: spec.p.to_string(),
            q: spec.q.to_string(),
        });
    }
    spec.require_solvable()?;
    let x = Derived::new(spec);
    let pq = x.inv_p - x.inv_q;
    let low = pq + half();
    if x.r_over_d1 <= low {
        return Ok(Rational::zero());
    }
    let middle = (x.r_over_d1 - low) * x.d2 / x.d();
    Ok(if b7_order(&x) == std::cmp::Ordering::Greater {
        if x.r_over_d1 <= c7_threshold(&x) {
            middle
        } else {
            pq * x.d1 / x.d()
        }
    } else if x.r_over_d1 <= Rational::one() - x.inv_q {
        middle
    } else {
        (half() - x.inv_p) * x.d2 / x.d()
    })
}

/// Exponent of `n` in the deterministic minimal error.
pub fn det_exponent(spec: &ProblemSpec) -> Rational {
    let x = Derived::new(spec);
    (-rat(spec.r as i64) + x.d1 * x.pq_plus) / x.d()
}

/// Theory envelopes with all constants set to one.
#[derive(Debug, Clone, Serialize)]
pub struct Envelopes {
    pub n: f64,
    /// Deterministic rate; present when point evaluation is continuous.
    pub det: Option<f64>,
    /// Lower envelope in the non-adaptive randomized setting, `Φ1(n)`.
    pub ran_non_lower: f64,
    pub ran_non_upper: f64,
    /// Adaptive envelopes; present when `2 < p < q`.
    pub ran_lower: Option<f64>,
    /// Present when additionally `n >= 4`.
    pub ran_upper: Option<f64>,
}

pub fn theory_envelopes(n: f64, spec: &ProblemSpec) -> Result<Envelopes> {
    spec.require_solvable()?;
    let x = Derived::new(spec);
    let log = (n + 1.0).log2();
    let p1 = phi1(n, spec);
    let b1 = if beta1(spec) { 1.0 } else { 0.0 };
    let gap = gap_regime(spec);
    let pow = if gap {
        2.0 - to_f64(x.inv_p)
    } else {
        2.0 - to_f64(x.inv_p_bar)
    };
    let det = embedding_check(spec.r, spec.p, spec.d1 + spec.d2)
        .then(|| n.powf(to_f64(det_exponent(spec))));
    let (ran_lower, ran_upper) = if gap {
        let s2 = if sigma2(spec) { 0.5 } else { 0.0 };
        let b2 = if beta2(spec) { 1.0 } else { 0.0 };
        let lower = phi2(n, spec)? * log.powf(s2);
        let upper = (n >= 4.0).then(|| {
            phi2(n / log, spec).expect("gap regime") * log.powf(b2 * (2.0 - to_f64(x.inv_p)))
        });
        (Some(lower), upper)
    } else {
        (None, None)
    };
    Ok(Envelopes {
        n,
        det,
        ran_non_lower: p1,
        ran_non_upper: p1 * log.powf(b1 * pow),
        ran_lower,
        ran_upper,
    })
}

/// All flags and exponents of a problem, for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub spec: ProblemSpec,
    pub p_bar: Exponent,
    pub sigma1: u8,
    pub beta1: u8,
    pub beta2: Option<u8>,
    pub sigma2: Option<u8>,
    pub embedded: bool,
    pub solvable: bool,
    pub compact: bool,
    pub phi1_branch: Phi1Branch,
    pub phi1_exponent: String,
    pub phi1_exponent_f64: f64,
    pub phi1_log_power: String,
    pub phi2_branch: Option<Phi2Branch>,
    pub phi2_exponent: Option<String>,
    pub phi2_exponent_f64: Option<f64>,
    pub det_exponent: Option<String>,
    pub theta: Option<f64>,
    pub theta_exact: Option<String>,
}

fn fmt_rat(x: Rational) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn regime_report(spec: &ProblemSpec) -> Result<RegimeReport> {
    spec.require_solvable()?;
    let gap = gap_regime(spec);
    let embedded = embedding_check(spec.r, spec.p, spec.d1 + spec.d2);
    let p1 = phi1_rate(spec);
    let (phi2_branch, phi2_exponent, theta) = if gap {
        let b = phi2_branch(spec)?;
        let e = phi2_rate(spec)?.exponent;
        (Some(b), Some(e), Some(gap_exponent(spec)?))
    } else {
        (None, None, None)
    };
    Ok(RegimeReport {
        spec: *spec,
        p_bar: spec.p_bar(),
        sigma1: sigma1(spec) as u8,
        beta1: beta1(spec) as u8,
        beta2: gap.then(|| beta2(spec) as u8),
        sigma2: gap.then(|| sigma2(spec) as u8),
        embedded,
        solvable: true,
        compact: compact_check(spec),
        phi1_branch: phi1_branch(spec),
        phi1_exponent: fmt_rat(p1.exponent),
        phi1_exponent_f64: to_f64(p1.exponent),
        phi1_log_power: fmt_rat(p1.log_power),
        phi2_branch,
        phi2_exponent: phi2_exponent.map(fmt_rat),
        phi2_exponent_f64: phi2_exponent.map(to_f64),
        det_exponent: embedded.then(|| fmt_rat(det_exponent(spec))),
        theta: theta.map(to_f64),
        theta_exact: theta.map(fmt_rat),
    })
}

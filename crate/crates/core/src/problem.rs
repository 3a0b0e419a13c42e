//! Problem parameters `(r, p, q, d1, d2)` and integrability exponents.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// An integrability exponent in `[1, ∞]`, kept exact so that regime
/// boundaries (equalities of rationals) are classified without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exponent {
    Finite(Rational),
    Infinite,
}

impl Exponent {
    pub fn integer(p: i64) -> Self {
        Exponent::Finite(Rational::from_integer(p))
    }

    /// `1/p`, with `1/∞ = 0`.
    pub fn inv(&self) -> Rational {
        match self {
            Exponent::Finite(p) => p.recip(),
            Exponent::Infinite => Rational::zero(),
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Exponent::Infinite)
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Exponent::Finite(p) => *p.numer() as f64 / *p.denom() as f64,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    /// Strict ordering on the extended reals.
    pub fn lt(&self, other: &Exponent) -> bool {
        match (self, other) {
            (Exponent::Finite(a), Exponent::Finite(b)) => a < b,
            (Exponent::Finite(_), Exponent::Infinite) => true,
            (Exponent::Infinite, _) => false,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Exponent::Finite(p) if *p < Rational::one() => Err(Error::InvalidSpec(format!(
                "exponent {p} must lie in [1, inf]"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) if p.is_integer() => write!(f, "{}", p.numer()),
            Exponent::Finite(p) => write!(f, "{}/{}", p.numer(), p.denom()),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    /// Accepts `inf`, `infinity`, `∞`, integers, and fractions `a/b`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        if lower == "inf" || lower == "infinity" || s == "∞" {
            return Ok(Exponent::Infinite);
        }
        let bad = || Error::InvalidSpec(format!("cannot parse exponent '{s}'"));
        let value = if let Some((a, b)) = s.split_once('/') {
            let a: i64 = a.trim().parse().map_err(|_| bad())?;
            let b: i64 = b.trim().parse().map_err(|_| bad())?;
            if b == 0 {
                return Err(bad());
            }
            Rational::new(a, b)
        } else {
            Rational::from_integer(s.parse().map_err(|_| bad())?)
        };
        let e = Exponent::Finite(value);
        e.validate()?;
        Ok(e)
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(p) => {
                let e = Exponent::integer(p);
                e.validate().map_err(serde::de::Error::custom)?;
                Ok(e)
            }
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Smoothness `r`, source exponent `p`, target exponent `q`, parameter
/// dimension `d1` and integration dimension `d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub r: u32,
    pub p: Exponent,
    pub q: Exponent,
    pub d1: u32,
    pub d2: u32,
}

impl ProblemSpec {
    /// Checks ranges only; solvability is a separate question answered by
    /// [`crate::rates::solvable_check`].
    pub fn new(r: u32, p: Exponent, q: Exponent, d1: u32, d2: u32) -> Result<Self> {
        p.validate()?;
        q.validate()?;
        if d1 == 0 || d2 == 0 {
            return Err(Error::InvalidSpec("d1 and d2 must be positive".into()));
        }
        if d1 + d2 > 8 {
            return Err(Error::InvalidSpec("d1 + d2 > 8 is not supported".into()));
        }
        Ok(Self { r, p, q, d1, d2 })
    }

    /// Shorthand for tests and examples; `None` means infinity.
    pub fn from_ints(r: u32, p: Option<i64>, q: Option<i64>, d1: u32, d2: u32) -> Result<Self> {
        let e = |x: Option<i64>| x.map_or(Exponent::Infinite, Exponent::integer);
        Self::new(r, e(p), e(q), d1, d2)
    }

    /// Same as [`ProblemSpec::new`] but also rejects unsolvable problems.
    pub fn solvable(r: u32, p: Exponent, q: Exponent, d1: u32, d2: u32) -> Result<Self> {
        let spec = Self::new(r, p, q, d1, d2)?;
        spec.require_solvable()?;
        Ok(spec)
    }

    pub fn require_solvable(&self) -> Result<()> {
        if crate::rates::solvable_check(self) {
            Ok(())
        } else {
            Err(Error::NotSolvable {
                r: self.r,
                p: self.p.to_string(),
                q: self.q.to_string(),
                d1: self.d1,
                d2: self.d2,
            })
        }
    }

    pub fn d(&self) -> usize {
        (self.d1 + self.d2) as usize
    }

    /// `p̄ = min(p, 2)` as an exponent.
    pub fn p_bar(&self) -> Exponent {
        if Exponent::integer(2).lt(&self.p) {
            Exponent::integer(2)
        } else {
            self.p
        }
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(r={}, p={}, q={}, d1={}, d2={})",
            self.r, self.p, self.q, self.d1, self.d2
        )
    }
}

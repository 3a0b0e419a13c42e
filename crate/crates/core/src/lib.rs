//! Randomized multilevel algorithms for parametric integration
//! `Sf(s) = ∫ f(s,t) dt` over Sobolev classes on `[0,1]^{d1+d2}`.

pub mod discrete_mean;
pub mod error;
pub mod instances;
pub mod integrand;
pub mod interpolation;
pub mod multilevel;
pub mod partition;
pub mod problem;
pub mod rates;

pub use error::{Error, Result};
pub use integrand::{CountingIntegrand, FnIntegrand, Integrand};
pub use problem::{Exponent, ProblemSpec, Rational};

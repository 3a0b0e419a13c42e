//! Functions on `[0,1]^d` that algorithms may sample.

use std::sync::atomic::{AtomicU64, Ordering};

/// A point-evaluable function on `[0,1]^d`. Implementations must tolerate
/// concurrent calls.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

impl<T: Integrand + ?Sized> Integrand for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
}

/// Wraps a closure as an [`Integrand`].
pub struct FnIntegrand<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnIntegrand<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Integrand for FnIntegrand<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Counts every call to the wrapped function. Used to check that reported
/// cardinalities match the information actually consumed.
pub struct CountingIntegrand<I> {
    inner: I,
    calls: AtomicU64,
}

impl<I: Integrand> CountingIntegrand<I> {
    pub fn new(inner: I) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<I: Integrand> Integrand for CountingIntegrand<I> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_calls() {
        let f = CountingIntegrand::new(FnIntegrand::new(1, |x: &[f64]| x[0] * 2.0));
        assert_eq!(f.eval(&[1.5]), 3.0);
        f.eval(&[0.0]);
        assert_eq!(f.calls(), 2);
        f.reset();
        assert_eq!(f.calls(), 0);
    }
}

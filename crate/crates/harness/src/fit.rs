//! Least-squares slopes on log-log data.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half width of the 95% confidence interval of the slope. Infinite
    /// with only two points.
    pub half_width: f64,
    pub points: usize,
}

impl SlopeFit {
    pub fn lower(&self) -> f64 {
        self.slope - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.slope + self.half_width
    }
}

/// Ordinary least squares of `y` on `x`. Needs at least two distinct `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<SlopeFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half_width = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        t * se
    } else {
        f64::INFINITY
    };
    Some(SlopeFit {
        slope,
        intercept,
        half_width,
        points: n,
    })
}

/// Slope of `log2 value` against `log2 n` over the rows with `n` at least
/// the median of the grid. Non-positive values are skipped.
pub fn upper_half_slope(n: &[u64], values: &[f64]) -> Option<SlopeFit> {
    let mut sorted = n.to_vec();
    sorted.sort_unstable();
    let median = sorted[(sorted.len() - 1) / 2];
    let (x, y): (Vec<f64>, Vec<f64>) = n
        .iter()
        .zip(values)
        .filter(|&(&ni, &v)| ni >= median && v > 0.0 && v.is_finite())
        .map(|(&ni, &v)| ((ni as f64).log2(), v.log2()))
        .unzip();
    ols(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.75 * v).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope + 0.75).abs() < 1e-14);
        assert!((f.intercept - 3.0).abs() < 1e-14);
        assert!(f.half_width < 1e-12);
    }

    #[test]
    fn upper_half_uses_large_budgets() {
        let n = [16u64, 64, 256, 1024, 4096];
        // Pre-asymptotic kink below the median.
        let v = [1.0, 1.0, 1.0 / 16.0, 1.0 / 64.0, 1.0 / 256.0];
        let f = upper_half_slope(&n, &v).unwrap();
        assert_eq!(f.points, 3);
        assert!((f.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(ols(&[1.0], &[2.0]).is_none());
        assert!(ols(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        assert!(ols(&[1.0, 2.0], &[2.0, 3.0]).unwrap().half_width.is_infinite());
    }
}

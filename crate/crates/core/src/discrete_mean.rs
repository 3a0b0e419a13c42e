//! Row means of an `N1 × N2` array, exactly or by randomized sampling.
//!
//! Indices are 0-based. Both estimators draw row `i` from its own ChaCha
//! stream, so results depend only on the input, the budget and the seed,
//! never on thread scheduling.

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::Exponent;

/// An `N1 × N2` array whose entries may be computed on demand.
pub trait ValueTensor: Sync {
    fn n1(&self) -> usize;
    fn n2(&self) -> usize;
    fn entry(&self, i: usize, j: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    n1: usize,
    n2: usize,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n1 * n2 {
            return Err(Error::LengthMismatch {
                expected: n1 * n2,
                got: values.len(),
            });
        }
        Ok(Self { n1, n2, values })
    }

    pub fn from_fn(n1: usize, n2: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let values = (0..n1 * n2).map(|k| f(k / n2, k % n2)).collect();
        Self { n1, n2, values }
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self::from_fn(n1, n2, |_, _| 0.0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n2..(i + 1) * self.n2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl ValueTensor for DenseTensor {
    fn n1(&self) -> usize {
        self.n1
    }
    fn n2(&self) -> usize {
        self.n2
    }
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n2 + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEstimate {
    pub row_means: Vec<f64>,
    /// Number of distinct `(i, j)` entries read.
    pub eval_count: u64,
}

/// Normalized `L_p` norm over the counting probability measure.
pub fn discrete_norm(values: &[f64], p: Exponent) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    Ok(match p {
        Exponent::Infinite => values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        Exponent::Finite(_) => {
            let pf = p.to_f64();
            let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                return Ok(0.0);
            }
            let s: f64 = values.iter().map(|v| (v.abs() / scale).powf(pf)).sum();
            scale * (s / values.len() as f64).powf(1.0 / pf)
        }
    })
}

/// `L_p^{N1,N2}` norm of a tensor.
pub fn tensor_norm(t: &DenseTensor, p: Exponent) -> Result<f64> {
    discrete_norm(t.values(), p)
}

/// Arithmetic row means reading every entry.
pub fn exact_mean<T: ValueTensor + ?Sized>(t: &T) -> MeanEstimate {
    let n2 = t.n2();
    let row_means = (0..t.n1())
        .into_par_iter()
        .map(|i| (0..n2).map(|j| t.entry(i, j)).sum::<f64>() / n2 as f64)
        .collect();
    MeanEstimate {
        row_means,
        eval_count: (t.n1() * n2) as u64,
    }
}

fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean of `t[i, cols]` with each distinct column read once. Uses a running
/// mean so that constant rows are reproduced exactly.
fn sampled_row_mean<T: ValueTensor + ?Sized>(t: &T, i: usize, cols: &mut [usize]) -> (f64, u64) {
    cols.sort_unstable();
    let mut mean = 0.0;
    let mut seen = 0usize;
    let mut distinct = 0u64;
    let mut a = 0;
    while a < cols.len() {
        let mut b = a + 1;
        while b < cols.len() && cols[b] == cols[a] {
            b += 1;
        }
        let v = t.entry(i, cols[a]);
        distinct += 1;
        let mult = b - a;
        seen += mult;
        if seen == mult {
            mean = v;
        } else {
            mean += (v - mean) * (mult as f64 / seen as f64);
        }
        a = b;
    }
    (mean, distinct)
}

fn draw_cols(rng: &mut ChaCha8Rng, k: usize, n2: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n2)).collect()
}

/// Non-adaptive estimator with at most `2n` entry reads.
///
/// For `n >= N1` each row gets `⌈n/N1⌉` i.i.d. uniform columns and the
/// estimate is unbiased. For `n < N1`, `n` rows chosen without replacement get
/// one sample each and the other rows are estimated by 0.
pub fn mc_mean_nonadaptive<T: ValueTensor + ?Sized, R: RngCore + ?Sized>(
    t: &T,
    n: u64,
    rng: &mut R,
) -> Result<MeanEstimate> {
    mc_mean_nonadaptive_seeded(t, n, rng.next_u64())
}

pub fn mc_mean_nonadaptive_seeded<T: ValueTensor + ?Sized>(
    t: &T,
    n: u64,
    seed: u64,
) -> Result<MeanEstimate> {
    if n == 0 {
        return Err(Error::EmptyBudget);
    }
    let (n1, n2) = (t.n1(), t.n2());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty);
    }
    let (rows, k) = selected_rows(n1, n, seed);
    let results: Vec<(usize, f64, u64)> = rows
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, i as u64);
            let mut cols = draw_cols(&mut rng, k, n2);
            let (m, c) = sampled_row_mean(t, i, &mut cols);
            (i, m, c)
        })
        .collect();
    let mut row_means = vec![0.0; n1];
    let mut eval_count = 0;
    for (i, m, c) in results {
        row_means[i] = m;
        eval_count += c;
    }
    assert!(eval_count <= 2 * n, "cardinality cap 2n violated");
    Ok(MeanEstimate {
        row_means,
        eval_count,
    })
}

/// Rows that receive samples and the per-row stage size.
fn selected_rows(n1: usize, n: u64, seed: u64) -> (Vec<usize>, usize) {
    if n >= n1 as u64 {
        ((0..n1).collect(), n.div_ceil(n1 as u64) as usize)
    } else {
        let mut rng = row_rng(seed, u64::MAX);
        let mut rows = index::sample(&mut rng, n1, n as usize).into_vec();
        rows.sort_unstable();
        (rows, 1)
    }
}

/// Allocation weights proportional to `M_i^p`, computed in the log domain.
fn moment_weights(moments: &[f64], p: Exponent) -> Vec<f64> {
    let max = moments.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return vec![0.0; moments.len()];
    }
    let raw: Vec<f64> = match p {
        Exponent::Infinite => moments.iter().map(|&m| (m == max) as u8 as f64).collect(),
        Exponent::Finite(_) => {
            let pf = p.to_f64();
            moments.iter().map(|&m| (m / max).powf(pf)).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Adaptive estimator with at most `6mn` entry reads, for `2 < p`.
///
/// Each of `m` independent repetitions first draws a pilot sample per row to
/// estimate its scale `M_i = (mean |x|^p)^{1/p}`, then spends a
/// second batch of `n` fresh samples across rows proportionally to `M_i^p`,
/// on top of the pilot size. The row estimate of a repetition is the mean of
/// its second batch; the final estimate is the per-row median over the
/// repetitions.
pub fn mc_mean_adaptive<T: ValueTensor + ?Sized, R: RngCore + ?Sized>(
    t: &T,
    n: u64,
    m: usize,
    p: Exponent,
    rng: &mut R,
) -> Result<MeanEstimate> {
    mc_mean_adaptive_seeded(t, n, m, p, rng.next_u64())
}

pub fn mc_mean_adaptive_seeded<T: ValueTensor + ?Sized>(
    t: &T,
    n: u64,
    m: usize,
    p: Exponent,
    seed: u64,
) -> Result<MeanEstimate> {
    if !Exponent::integer(2).lt(&p) {
        return Err(Error::AdaptiveRegime(p.to_string()));
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyBudget);
    }
    let (n1, n2) = (t.n1(), t.n2());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty);
    }
    let mut per_rep = vec![vec![0.0; n1]; m];
    let mut eval_count = 0u64;
    // The visited rows are shared by all repetitions so that the median is
    // taken over estimates of the same rows.
    let (rows, k) = selected_rows(n1, n, seed);
    for (rep, estimates) in per_rep.iter_mut().enumerate() {
        let rep_seed = derive_seed(seed, rep as u64);
        // Stage 1: pilot scale per row.
        let pilot: Vec<(f64, Vec<usize>)> = rows
            .par_iter()
            .map(|&i| {
                let mut rng = row_rng(rep_seed, 2 * i as u64);
                let mut cols = draw_cols(&mut rng, k, n2);
                let scale = pilot_moment(t, i, &mut cols, p);
                cols.dedup();
                (scale, cols)
            })
            .collect();
        let moments: Vec<f64> = pilot.iter().map(|(mm, _)| *mm).collect();
        let weights = moment_weights(&moments, p);
        // Stage 2: fresh samples, proportional allocation.
        let stage2: Vec<(usize, f64, u64)> = rows
            .par_iter()
            .zip(pilot.into_par_iter())
            .zip(weights.par_iter())
            .map(|((&i, (_, pilot_cols)), &w)| {
                let ni = k + (n as f64 * w).ceil() as usize;
                let mut rng = row_rng(rep_seed, 2 * i as u64 + 1);
                let mut cols = draw_cols(&mut rng, ni, n2);
                let (mean, _) = sampled_row_mean(t, i, &mut cols);
                // Distinct reads across both stages of this repetition.
                let mut all = pilot_cols;
                all.extend_from_slice(&cols);
                all.sort_unstable();
                all.dedup();
                (i, mean, all.len() as u64)
            })
            .collect();
        for (i, mean, c) in stage2 {
            estimates[i] = mean;
            eval_count += c;
        }
    }
    assert!(eval_count <= 6 * m as u64 * n, "cardinality cap 6mn violated");
    let row_means = (0..n1)
        .map(|i| median(per_rep.iter().map(|e| e[i]).collect()))
        .collect();
    Ok(MeanEstimate {
        row_means,
        eval_count,
    })
}

/// Pilot scale `(mean |x|^p)^{1/p}` over the drawn columns (max for
/// `p = ∞`), reading each distinct entry once. Leaves `cols` sorted.
fn pilot_moment<T: ValueTensor + ?Sized>(t: &T, i: usize, cols: &mut [usize], p: Exponent) -> f64 {
    cols.sort_unstable();
    let mut vals = Vec::with_capacity(cols.len());
    let mut last = None;
    for &j in cols.iter() {
        let v = match last {
            Some((lj, lv)) if lj == j => lv,
            _ => t.entry(i, j).abs(),
        };
        last = Some((j, v));
        vals.push(v);
    }
    discrete_norm(&vals, p).unwrap_or(0.0)
}

/// Independent seed for repetition `rep`.
fn derive_seed(seed: u64, rep: u64) -> u64 {
    let mut rng = row_rng(seed, u64::MAX - 1);
    for _ in 0..rep {
        rng.next_u64();
    }
    rng.next_u64()
}

/// Median, averaging the two middle values for even length.
pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

//! Tensor-product Lagrange interpolation on dyadic cells with a randomly
//! shifted node grid, and the two-level detail operator built from it.
//!
//! Polynomials are stored by their coefficients in the Lagrange basis, i.e.
//! their values at the nodes. Multi-indices are enumerated row-major with
//! the last axis fastest, the same convention as cell indices.

use std::collections::HashMap;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::Integrand;
use crate::partition::{cell_anchor, cell_count, locate, locate_axis};
use crate::problem::Rational;

pub const MAX_R: usize = 12;
pub const MAX_DIM: usize = 8;

/// Default distance between the node grid and the upper cell faces.
pub const DEFAULT_MARGIN: (i64, i64) = (1, 2);

/// Lagrange basis of maximum coordinate degree `r - 1` on `[0,1]^d`.
///
/// For `r >= 2` the nodes are the uniform grid with `r` points per axis on
/// `[0, 1 - margin]`; for `r = 1` there is a single node at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    r: u32,
    d: usize,
    margin: Rational,
    margin_f: f64,
    nodes: Vec<f64>,
    denoms: Vec<f64>,
    kappa: usize,
}

impl LagrangeBasis {
    pub fn new(r: u32, d: usize) -> Result<Self> {
        Self::with_margin(r, d, Rational::new(DEFAULT_MARGIN.0, DEFAULT_MARGIN.1))
    }

    pub fn with_margin(r: u32, d: usize, margin: Rational) -> Result<Self> {
        if r == 0 {
            return Err(Error::ZeroSmoothness);
        }
        if r as usize > MAX_R {
            return Err(Error::InvalidSpec(format!("r = {r} exceeds {MAX_R}")));
        }
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidSpec(format!("dimension must lie in 1..={MAX_DIM}")));
        }
        if margin <= Rational::zero() || margin >= Rational::from_integer(1) {
            return Err(Error::InvalidSpec("margin must lie in (0,1)".into()));
        }
        let nodes: Vec<f64> = exact_nodes(r, margin)
            .iter()
            .map(|t| t.to_f64().unwrap())
            .collect();
        let denoms = (0..nodes.len())
            .map(|m| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|&(n, _)| n != m)
                    .map(|(_, tn)| nodes[m] - tn)
                    .product()
            })
            .collect();
        let kappa = nodes.len().pow(d as u32);
        Ok(Self {
            r,
            d,
            margin,
            margin_f: margin.to_f64().unwrap(),
            nodes,
            denoms,
            kappa,
        })
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of basis functions, `r^d`.
    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Points per axis.
    pub fn per_axis(&self) -> usize {
        self.nodes.len()
    }

    pub fn margin(&self) -> f64 {
        self.margin_f
    }

    pub fn nodes_1d(&self) -> &[f64] {
        &self.nodes
    }

    /// Same node grid in another dimension.
    pub fn in_dim(&self, d: usize) -> Self {
        Self::with_margin(self.r, d, self.margin).expect("validated basis")
    }

    /// Per-axis digits of multi-index `k`.
    pub fn digits(&self, k: usize) -> Vec<usize> {
        digits(k, self.per_axis(), self.d)
    }

    pub fn node(&self, k: usize) -> Vec<f64> {
        self.digits(k).into_iter().map(|m| self.nodes[m]).collect()
    }

    /// One-dimensional basis polynomial `m` at `x`.
    pub fn lambda(&self, m: usize, x: f64) -> f64 {
        let mut v = 1.0;
        for (n, tn) in self.nodes.iter().enumerate() {
            if n != m {
                v *= x - tn;
            }
        }
        v / self.denoms[m]
    }

    /// All one-dimensional basis values at `x`.
    pub fn lambdas(&self, x: f64, out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.lambda(m, x);
        }
    }

    /// Tensor basis function `k` at `x`.
    pub fn phi(&self, k: usize, x: &[f64]) -> f64 {
        self.digits(k)
            .into_iter()
            .zip(x)
            .map(|(m, &xa)| self.lambda(m, xa))
            .product()
    }

    /// Values of all `kappa` basis functions at `x`.
    pub fn phi_all(&self, x: &[f64]) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = x
            .iter()
            .map(|&xa| {
                let mut v = vec![0.0; self.per_axis()];
                self.lambdas(xa, &mut v);
                v
            })
            .collect();
        tensor_outer(&per_axis)
    }

    /// `sum_k c_k phi_k(x)`.
    pub fn eval_coeffs(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let n = self.per_axis();
        let mut per_axis = [[0.0f64; MAX_R]; MAX_DIM];
        for (a, &xa) in x.iter().enumerate() {
            self.lambdas(xa, &mut per_axis[a][..n]);
        }
        contract(coeffs, &per_axis[..x.len()], n)
    }

    /// `∫_0^1 λ_m(x) dx` for every one-dimensional basis polynomial,
    /// computed in exact rational arithmetic.
    pub fn integral_weights(&self) -> Vec<f64> {
        exact_integral_weights(self.r, self.margin)
            .iter()
            .map(|w| w.to_f64().unwrap())
            .collect()
    }

    /// Tensor integrals `∫_{[0,1]^d} φ_k` for all `k`.
    pub fn tensor_integral_weights(&self) -> Vec<f64> {
        let w = self.integral_weights();
        tensor_outer(&vec![w; self.d])
    }

    /// Interpolation of `f` at the nodes: `P f = sum_k f(t_k) φ_k`.
    pub fn base_interpolate(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.kappa {
            return Err(Error::LengthMismatch {
                expected: self.kappa,
                got: samples.len(),
            });
        }
        if let Some(i) = samples.iter().position(|v| v.is_nan()) {
            return Err(Error::MissingSample(i));
        }
        Ok(samples.to_vec())
    }
}

fn digits(mut k: usize, base: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; d];
    for a in (0..d).rev() {
        out[a] = k % base;
        k /= base;
    }
    out
}

/// Row-major outer product of per-axis vectors.
fn tensor_outer(per_axis: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![1.0];
    for v in per_axis {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &o in &out {
            for &x in v {
                next.push(o * x);
            }
        }
        out = next;
    }
    out
}

fn contract(coeffs: &[f64], per_axis: &[[f64; MAX_R]], n: usize) -> f64 {
    match per_axis.len() {
        1 => (0..n).map(|m| coeffs[m] * per_axis[0][m]).sum(),
        _ => {
            let stride = coeffs.len() / n;
            let rest = &per_axis[1..];
            (0..n)
                .map(|m| per_axis[0][m] * contract(&coeffs[m * stride..(m + 1) * stride], rest, n))
                .sum()
        }
    }
}

fn exact_nodes(r: u32, margin: Rational) -> Vec<Rational> {
    if r == 1 {
        return vec![Rational::zero()];
    }
    let one = Rational::from_integer(1);
    (0..r as i64)
        .map(|m| Rational::from_integer(m) * (one - margin) / Rational::from_integer(r as i64 - 1))
        .collect()
}

fn exact_integral_weights(r: u32, margin: Rational) -> Vec<Ratio<i128>> {
    let nodes: Vec<Ratio<i128>> = exact_nodes(r, margin)
        .into_iter()
        .map(|t| Ratio::new(*t.numer() as i128, *t.denom() as i128))
        .collect();
    (0..nodes.len())
        .map(|m| {
            // Expand Π_{n≠m} (x - t_n)/(t_m - t_n) into monomial coefficients.
            let mut poly = vec![Ratio::<i128>::from_integer(1)];
            for (n, tn) in nodes.iter().enumerate() {
                if n == m {
                    continue;
                }
                let scale = nodes[m] - tn;
                let mut next = vec![Ratio::<i128>::zero(); poly.len() + 1];
                for (e, c) in poly.iter().enumerate() {
                    next[e + 1] += *c / scale;
                    next[e] -= *c * tn / scale;
                }
                poly = next;
            }
            poly.iter()
                .enumerate()
                .map(|(e, c)| *c / Ratio::from_integer(e as i128 + 1))
                .fold(Ratio::zero(), |a, b| a + b)
        })
        .collect()
}

/// How the grid shift is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    Uniform,
    Zero,
}

pub fn draw_shift<R: Rng + ?Sized>(mode: ShiftMode, d: usize, rng: &mut R) -> Vec<f64> {
    match mode {
        ShiftMode::Uniform => (0..d).map(|_| rng.random::<f64>()).collect(),
        ShiftMode::Zero => vec![0.0; d],
    }
}

/// The coefficients `a_jk(ρ) = φ_k(t_j - δρ)`, stored as one `n×n` factor
/// per axis since the full matrix is their Kronecker product.
#[derive(Debug, Clone)]
pub struct ShiftMatrix {
    n: usize,
    factors: Vec<Vec<f64>>,
}

impl ShiftMatrix {
    pub fn new(basis: &LagrangeBasis, rho: &[f64]) -> Self {
        let n = basis.per_axis();
        let factors = rho
            .iter()
            .map(|&ra| {
                let mut f = vec![0.0; n * n];
                for j in 0..n {
                    for k in 0..n {
                        f[j * n + k] = basis.lambda(k, basis.nodes[j] - basis.margin_f * ra);
                    }
                }
                f
            })
            .collect();
        Self { n, factors }
    }

    pub fn kappa(&self) -> usize {
        self.n.pow(self.factors.len() as u32)
    }

    pub fn entry(&self, j: usize, k: usize) -> f64 {
        let d = self.factors.len();
        let dj = digits(j, self.n, d);
        let dk = digits(k, self.n, d);
        (0..d)
            .map(|a| self.factors[a][dj[a] * self.n + dk[a]])
            .product()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let kappa = self.kappa();
        let mut out = vec![0.0; kappa * kappa];
        for j in 0..kappa {
            for k in 0..kappa {
                out[j * kappa + k] = self.entry(j, k);
            }
        }
        out
    }

    /// `c_j = sum_k a_jk v_k`, applied one axis at a time.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let d = self.factors.len();
        let mut cur = v.to_vec();
        let mut next = vec![0.0; cur.len()];
        for (a, fac) in self.factors.iter().enumerate() {
            let stride = n.pow((d - 1 - a) as u32);
            let block = stride * n;
            for base in (0..cur.len()).step_by(block) {
                for off in 0..stride {
                    for j in 0..n {
                        let mut s = 0.0;
                        for k in 0..n {
                            s += fac[j * n + k] * cur[base + k * stride + off];
                        }
                        next[base + j * stride + off] = s;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Sample points `t_k + δρ` of the shifted interpolant on `[0,1]^d`.
pub fn shifted_nodes(basis: &LagrangeBasis, rho: &[f64]) -> Vec<Vec<f64>> {
    (0..basis.kappa())
        .map(|k| {
            basis
                .node(k)
                .iter()
                .zip(rho)
                .map(|(t, r)| t + basis.margin_f * r)
                .collect()
        })
        .collect()
}

/// A piecewise polynomial on the level-`l` cells of `[0,1]^d`, with Lagrange
/// coefficients per cell in local coordinates `2^l (x - s_li)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    pub level: u32,
    pub basis: LagrangeBasis,
    pub coeffs: Vec<f64>,
}

impl PiecewisePoly {
    pub fn zero(basis: LagrangeBasis, level: u32) -> Self {
        let len = cell_count(level, basis.dim()) * basis.kappa();
        Self {
            level,
            basis,
            coeffs: vec![0.0; len],
        }
    }

    pub fn cell_coeffs(&self, cell: usize) -> &[f64] {
        let k = self.basis.kappa();
        &self.coeffs[cell * k..(cell + 1) * k]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let cell = locate(self.level, x);
        let scale = (self.level as f64).exp2();
        let mut u = [0.0f64; MAX_DIM];
        for (a, &xa) in x.iter().enumerate() {
            let k = locate_axis(self.level, xa);
            u[a] = xa * scale - k as f64;
        }
        self.basis.eval_coeffs(self.cell_coeffs(cell), &u[..x.len()])
    }

    /// `self += a * other`, both on the same level and basis.
    pub fn scaled_add(&mut self, a: f64, other: &PiecewisePoly) {
        assert_eq!(self.level, other.level);
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    /// Re-expresses the polynomial on the finer level `level`. Exact up to
    /// rounding since each piece is reproduced by the finer interpolant.
    pub fn refine_to(&self, level: u32) -> PiecewisePoly {
        assert!(level >= self.level);
        if level == self.level {
            return self.clone();
        }
        let d = self.basis.dim();
        let kappa = self.basis.kappa();
        let nodes: Vec<Vec<f64>> = (0..kappa).map(|k| self.basis.node(k)).collect();
        let mut out = PiecewisePoly::zero(self.basis.clone(), level);
        let h = (-(level as f64)).exp2();
        for cell in 0..cell_count(level, d) {
            let anchor = cell_anchor(level, cell, d).expect("in range");
            let parent = locate(self.level, &anchor);
            let panchor = cell_anchor(self.level, parent, d).expect("in range");
            let pscale = (self.level as f64).exp2();
            let pc = self.cell_coeffs(parent);
            for (k, t) in nodes.iter().enumerate() {
                let u: Vec<f64> = (0..d)
                    .map(|a| (anchor[a] + h * t[a] - panchor[a]) * pscale)
                    .collect();
                out.coeffs[cell * kappa + k] = self.basis.eval_coeffs(pc, &u);
            }
        }
        out
    }
}

/// Result of interpolating a function, with the number of samples taken.
#[derive(Debug, Clone)]
pub struct Interpolant {
    pub poly: PiecewisePoly,
    pub evaluations: u64,
}

/// `P_{0ρ}` on the unit cube: coefficients `sum_k a_jk f(t_k + δρ)`.
pub fn shifted_interpolate<F: Integrand + ?Sized>(
    basis: &LagrangeBasis,
    rho: &[f64],
    f: &F,
) -> Interpolant {
    level_interpolate(basis, 0, rho, f)
}

/// `P_{lρ} f = sum_i R_li P_{0ρ} E_li f`, sampling `f` at the
/// `κ 2^{dl}` points `s_li + 2^-l (t_k + δρ)`.
pub fn level_interpolate<F: Integrand + ?Sized>(
    basis: &LagrangeBasis,
    level: u32,
    rho: &[f64],
    f: &F,
) -> Interpolant {
    use rayon::prelude::*;
    let d = basis.dim();
    let kappa = basis.kappa();
    let shift = ShiftMatrix::new(basis, rho);
    let local = shifted_nodes(basis, rho);
    let h = (-(level as f64)).exp2();
    let cells = cell_count(level, d);
    let mut coeffs = vec![0.0; cells * kappa];
    coeffs
        .par_chunks_mut(kappa)
        .enumerate()
        .for_each(|(cell, out)| {
            let anchor = cell_anchor(level, cell, d).expect("in range");
            let mut x = vec![0.0; d];
            let values: Vec<f64> = local
                .iter()
                .map(|t| {
                    for a in 0..d {
                        x[a] = anchor[a] + h * t[a];
                    }
                    f.eval(&x)
                })
                .collect();
            out.copy_from_slice(&shift.apply(&values));
        });
    Interpolant {
        poly: PiecewisePoly {
            level,
            basis: basis.clone(),
            coeffs,
        },
        evaluations: (cells * kappa) as u64,
    }
}

/// Evaluation data of the detail operator `P'_{0ρ} = P_{1ρ} - P_{0ρ}`
/// expanded in the level-1 basis `ψ_j`, `j = κ i0 + j0`.
#[derive(Debug, Clone)]
pub struct DetailFrame {
    basis: LagrangeBasis,
    rho: Vec<f64>,
    kappa1: usize,
    kappa2: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    merged_offsets: Vec<usize>,
    merged_points: Vec<f64>,
    merged_weights: Vec<f64>,
}

impl DetailFrame {
    pub fn new(basis: &LagrangeBasis, rho: &[f64]) -> Self {
        let d = basis.dim();
        let n = basis.per_axis();
        let kappa = basis.kappa();
        let halves = 1usize << d;
        let kappa1 = halves * kappa;
        let kappa2 = 2 * kappa;
        let shift = ShiftMatrix::new(basis, rho);
        let local = shifted_nodes(basis, rho);

        // Per-axis factor of the coarse weights:
        // c_a[h][j0][k] = sum_m λ_m(h/2 + t_{j0}/2) A_a[m][k].
        let coarse_factor: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let fac = &shift.factors[a];
                let mut c = vec![0.0; 2 * n * n];
                for h in 0..2 {
                    for j0 in 0..n {
                        let x = 0.5 * h as f64 + 0.5 * basis.nodes[j0];
                        for k in 0..n {
                            c[(h * n + j0) * n + k] =
                                (0..n).map(|m| basis.lambda(m, x) * fac[m * n + k]).sum();
                        }
                    }
                }
                c
            })
            .collect();

        let mut nodes = vec![0.0; kappa1 * kappa2 * d];
        let mut weights = vec![0.0; kappa1 * kappa2];
        for i0 in 0..halves {
            let s1 = cell_anchor(1, i0, d).expect("in range");
            let hd = digits(i0, 2, d);
            for j0 in 0..kappa {
                let j = kappa * i0 + j0;
                let jd = digits(j0, n, d);
                for k in 0..kappa2 {
                    let pt = &mut nodes[(j * kappa2 + k) * d..(j * kappa2 + k + 1) * d];
                    if k < kappa {
                        for a in 0..d {
                            pt[a] = s1[a] + 0.5 * local[k][a];
                        }
                        weights[j * kappa2 + k] = shift.entry(j0, k);
                    } else {
                        let kk = k - kappa;
                        pt.copy_from_slice(&local[kk]);
                        let kd = digits(kk, n, d);
                        let prod: f64 = (0..d)
                            .map(|a| coarse_factor[a][(hd[a] * n + jd[a]) * n + kd[a]])
                            .product();
                        weights[j * kappa2 + k] = -prod;
                    }
                }
            }
        }
        let mut frame = Self {
            basis: basis.clone(),
            rho: rho.to_vec(),
            kappa1,
            kappa2,
            nodes,
            weights,
            merged_offsets: Vec::new(),
            merged_points: Vec::new(),
            merged_weights: Vec::new(),
        };
        frame.merge();
        frame
    }

    /// Collapses coincident points within each `j` and drops zero weights.
    fn merge(&mut self) {
        let d = self.basis.dim();
        self.merged_offsets = vec![0];
        self.merged_points.clear();
        self.merged_weights.clear();
        for j in 0..self.kappa1 {
            let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
            let start = self.merged_weights.len();
            for k in 0..self.kappa2 {
                let w = self.weights[j * self.kappa2 + k];
                if w == 0.0 {
                    continue;
                }
                let pt = self.node(j, k).to_vec();
                let key: Vec<u64> = pt.iter().map(|x| x.to_bits()).collect();
                match seen.get(&key) {
                    Some(&pos) => self.merged_weights[pos] += w,
                    None => {
                        seen.insert(key, self.merged_weights.len());
                        self.merged_points.extend_from_slice(&pt);
                        self.merged_weights.push(w);
                    }
                }
            }
            // Drop terms that cancelled exactly.
            let mut keep_p = Vec::new();
            let mut keep_w = Vec::new();
            for t in start..self.merged_weights.len() {
                if self.merged_weights[t] != 0.0 {
                    keep_p.extend_from_slice(&self.merged_points[t * d..(t + 1) * d]);
                    keep_w.push(self.merged_weights[t]);
                }
            }
            self.merged_points.truncate(start * d);
            self.merged_weights.truncate(start);
            self.merged_points.extend(keep_p);
            self.merged_weights.extend(keep_w);
            self.merged_offsets.push(self.merged_weights.len());
        }
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `κ' = 2^d κ`.
    pub fn kappa1(&self) -> usize {
        self.kappa1
    }

    /// `κ'' = 2κ`.
    pub fn kappa2(&self) -> usize {
        self.kappa2
    }

    /// Node `t_jk(ρ)`.
    pub fn node(&self, j: usize, k: usize) -> &[f64] {
        let d = self.basis.dim();
        let at = (j * self.kappa2 + k) * d;
        &self.nodes[at..at + d]
    }

    /// Weight `b_jk(ρ)`.
    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.weights[j * self.kappa2 + k]
    }

    /// The distinct points and combined weights used for row `j`.
    pub fn terms(&self, j: usize) -> (&[f64], &[f64]) {
        let d = self.basis.dim();
        let (a, b) = (self.merged_offsets[j], self.merged_offsets[j + 1]);
        (&self.merged_points[a * d..b * d], &self.merged_weights[a..b])
    }

    /// `sum_k b_jk f(s + h t_jk)` over the merged terms, sampling `f` once per
    /// distinct point. Returns the value and the number of samples.
    pub fn apply_row<F: Integrand + ?Sized>(
        &self,
        j: usize,
        anchor: &[f64],
        h: f64,
        f: &F,
    ) -> (f64, u64) {
        let d = self.basis.dim();
        let (pts, ws) = self.terms(j);
        let mut x = [0.0f64; MAX_DIM];
        let mut acc = 0.0;
        for (t, w) in ws.iter().enumerate() {
            for a in 0..d {
                x[a] = anchor[a] + h * pts[t * d + a];
            }
            acc += w * f.eval(&x[..d]);
        }
        (acc, ws.len() as u64)
    }

    /// Flips the sign of every coarse weight. Only for mutation tests.
    #[doc(hidden)]
    pub fn corrupt_coarse_sign(&mut self) {
        for j in 0..self.kappa1 {
            for k in self.basis.kappa()..self.kappa2 {
                self.weights[j * self.kappa2 + k] *= -1.0;
            }
        }
        self.merge();
    }
}

/// `P'_{lρ} f` expanded in `ψ_lij = R_li ψ_j`.
#[derive(Debug, Clone)]
pub struct DetailExpansion {
    pub level: u32,
    pub basis: LagrangeBasis,
    /// `c(i, j)` at `i * κ' + j`.
    pub coeffs: Vec<f64>,
    pub evaluations: u64,
}

impl DetailExpansion {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.basis.dim();
        let kappa = self.basis.kappa();
        let kappa1 = kappa << d;
        let cell = locate(self.level, x);
        let scale = (self.level as f64).exp2();
        let mut v = [0.0f64; MAX_DIM];
        let mut half = 0usize;
        for (a, &xa) in x.iter().enumerate() {
            let u = xa * scale - locate_axis(self.level, xa) as f64;
            let ha = locate_axis(1, u);
            half = (half << 1) | ha;
            v[a] = 2.0 * u - ha as f64;
        }
        let c = &self.coeffs[cell * kappa1 + half * kappa..cell * kappa1 + (half + 1) * kappa];
        self.basis.eval_coeffs(c, &v[..d])
    }
}

/// `P'_{lρ} f = sum_i R_li P'_{0ρ} E_li f`. Within one cell every distinct
/// sample point is evaluated once.
pub fn detail_apply<F: Integrand + ?Sized>(frame: &DetailFrame, level: u32, f: &F) -> DetailExpansion {
    use rayon::prelude::*;
    let d = frame.basis.dim();
    let kappa1 = frame.kappa1;
    let h = (-(level as f64)).exp2();
    let cells = cell_count(level, d);
    let mut coeffs = vec![0.0; cells * kappa1];
    let evals: u64 = coeffs
        .par_chunks_mut(kappa1)
        .enumerate()
        .map(|(cell, out)| {
            let anchor = cell_anchor(level, cell, d).expect("in range");
            let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
            let mut x = vec![0.0; d];
            for (j, o) in out.iter_mut().enumerate() {
                let (pts, ws) = frame.terms(j);
                let mut acc = 0.0;
                for (t, w) in ws.iter().enumerate() {
                    for a in 0..d {
                        x[a] = anchor[a] + h * pts[t * d + a];
                    }
                    let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                    let val = *cache.entry(key).or_insert_with(|| f.eval(&x));
                    acc += w * val;
                }
                *o = acc;
            }
            cache.len() as u64
        })
        .sum();
    DetailExpansion {
        level,
        basis: frame.basis.clone(),
        coeffs,
        evaluations: evals,
    }
}

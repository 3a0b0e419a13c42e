//! Dyadic cube geometry on `[0,1]^d`.
//!
//! Cells of level `l` have side `2^-l`. They are numbered `0..2^{dl}` in
//! row-major order over the per-axis indices, last axis fastest. A point on a
//! shared face belongs to the cell with the smaller per-axis index, except
//! that the last cell along each axis is closed.

use crate::error::{Error, Result};

/// Number of cells of level `l` in dimension `d`.
pub fn cell_count(level: u32, dim: usize) -> usize {
    1usize << (level as usize * dim)
}

fn check_index(level: u32, index: usize, dim: usize) -> Result<()> {
    if level as usize * dim >= usize::BITS as usize - 1 || index >= cell_count(level, dim) {
        return Err(Error::IndexOutOfRange { level, index, dim });
    }
    Ok(())
}

/// Per-axis integer coordinates of cell `index`.
pub fn cell_coords(level: u32, index: usize, dim: usize) -> Result<Vec<usize>> {
    check_index(level, index, dim)?;
    let mask = (1usize << level) - 1;
    let mut out = vec![0; dim];
    for (a, c) in out.iter_mut().enumerate() {
        let shift = level as usize * (dim - 1 - a);
        *c = (index >> shift) & mask;
    }
    Ok(out)
}

/// The componentwise-least corner of cell `index` at `level`.
pub fn cell_anchor(level: u32, index: usize, dim: usize) -> Result<Vec<f64>> {
    let h = (-(level as f64)).exp2();
    Ok(cell_coords(level, index, dim)?
        .into_iter()
        .map(|k| k as f64 * h)
        .collect())
}

/// Writes the anchor of cell `index` into `out`, whose length is the
/// dimension. The index is not range-checked.
#[inline]
pub fn anchor_into(level: u32, index: usize, out: &mut [f64]) {
    let dim = out.len();
    let mask = (1usize << level) - 1;
    let h = (-(level as f64)).exp2();
    for (a, o) in out.iter_mut().enumerate() {
        let shift = level as usize * (dim - 1 - a);
        *o = ((index >> shift) & mask) as f64 * h;
    }
}

/// Splits a joint index over `[0,1]^{d1+d2}` into parameter and integration
/// cell indices, `i = i1 * 2^{d2 l} + i2`.
pub fn split_index(index: usize, level: u32, d1: usize, d2: usize) -> Result<(usize, usize)> {
    check_index(level, index, d1 + d2)?;
    let n2 = cell_count(level, d2);
    Ok((index / n2, index % n2))
}

/// Inverse of [`split_index`].
pub fn join_index(i1: usize, i2: usize, level: u32, d2: usize) -> usize {
    i1 * cell_count(level, d2) + i2
}

/// `s_li + 2^-l s`, the argument map of the restriction to a cell.
pub fn rescale_to_cell(level: u32, index: usize, s: &[f64]) -> Result<Vec<f64>> {
    let anchor = cell_anchor(level, index, s.len())?;
    let h = (-(level as f64)).exp2();
    Ok(anchor.iter().zip(s).map(|(a, x)| a + h * x).collect())
}

/// `2^l (x - s_li)`, mapping cell `index` back onto `[0,1]^d`.
pub fn to_local(level: u32, index: usize, x: &[f64]) -> Result<Vec<f64>> {
    let anchor = cell_anchor(level, index, x.len())?;
    let scale = (level as f64).exp2();
    Ok(anchor.iter().zip(x).map(|(a, y)| (y - a) * scale).collect())
}

/// Per-axis cell coordinate of `x` at `level`, clamped into `[0, 2^l)`.
#[inline]
pub fn locate_axis(level: u32, x: f64) -> usize {
    let m = 1usize << level;
    let k = (x * m as f64).floor();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(m - 1)
    }
}

/// Index of the cell owning `x`. Points outside `[0,1]^d` are clamped.
pub fn locate(level: u32, x: &[f64]) -> usize {
    x.iter()
        .fold(0usize, |acc, &xa| (acc << level) | locate_axis(level, xa))
}

//! Log transform, quantile normalization and condition-wise presence filtering.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::datamodel::{Design, IntensityMatrix};
use crate::error::{Error, Result};

pub fn log2_transform(m: &IntensityMatrix) -> Result<IntensityMatrix> {
    let mut values = m.values().clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if let Some(v) = m.get(i, j) {
                if v <= 0.0 {
                    return Err(Error::Domain(format!(
                        "cannot take log2 of {} at row `{}`, column `{}`",
                        v,
                        m.row_ids()[i],
                        m.col_ids()[j]
                    )));
                }
                values[(i, j)] = v.log2();
            }
        }
    }
    m.with_contents(values, m.mask().clone())
}

/// Type-7 empirical quantile of sorted data at probability `p` in [0, 1].
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 1-based ranks with ties averaged, in the order of `values`.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Quantile normalization.
///
/// The reference distribution is the rank-wise mean of the columns'
/// quantile functions evaluated on a grid of `max_j n_obs(j)` points
/// (type-7 interpolation). Each observed value is mapped through the
/// reference quantile function at its own column's plotting position
/// `(rank - 1) / (n_obs - 1)`, with tied values sharing their average rank.
/// On complete matrices this is the classic algorithm.
pub fn quantile_normalize(m: &IntensityMatrix) -> Result<IntensityMatrix> {
    let n = m.ncols();
    let columns: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|j| (0..m.nrows()).filter_map(|i| m.get(i, j).map(|v| (i, v))).collect())
        .collect();
    if let Some(j) = columns.iter().position(|c| c.is_empty()) {
        return Err(Error::InvalidMatrix(format!(
            "column `{}` has no observed values",
            m.col_ids()[j]
        )));
    }
    let grid = columns.iter().map(Vec::len).max().unwrap_or(0);
    let sorted: Vec<Vec<f64>> = columns
        .par_iter()
        .map(|c| {
            let mut v: Vec<f64> = c.iter().map(|&(_, x)| x).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let position = |r: usize, len: usize| {
        if len <= 1 {
            0.5
        } else {
            r as f64 / (len - 1) as f64
        }
    };
    let mut reference = vec![0.0; grid];
    for col in &sorted {
        for (r, slot) in reference.iter_mut().enumerate() {
            *slot += if col.len() == grid {
                col[r]
            } else {
                quantile_sorted(col, position(r, grid))
            };
        }
    }
    for slot in &mut reference {
        *slot /= n as f64;
    }

    let mapped: Vec<Vec<(usize, f64)>> = columns
        .par_iter()
        .map(|c| {
            let vals: Vec<f64> = c.iter().map(|&(_, x)| x).collect();
            let ranks = average_ranks(&vals);
            let len = vals.len();
            c.iter()
                .zip(ranks)
                .map(|(&(i, _), rank)| {
                    let p = if len <= 1 {
                        0.5
                    } else {
                        (rank - 1.0) / (len - 1) as f64
                    };
                    (i, quantile_sorted(&reference, p))
                })
                .collect()
        })
        .collect();

    let mut values = DMatrix::from_element(m.nrows(), n, f64::NAN);
    for (j, col) in mapped.into_iter().enumerate() {
        for (i, v) in col {
            values[(i, j)] = v;
        }
    }
    m.with_contents(values, m.mask().clone())
}

/// Keep rows with at least `k` observed values in every condition.
///
/// `design` must be aligned to the matrix columns.
pub fn filter_presence(m: &IntensityMatrix, design: &Design, k: usize) -> Result<IntensityMatrix> {
    if design.n_samples() != m.ncols() {
        return Err(Error::InvalidDesign(format!(
            "design has {} samples, matrix has {} columns",
            design.n_samples(),
            m.ncols()
        )));
    }
    let min_group = design.group_sizes().into_iter().min().unwrap_or(0);
    if k == 0 || k > min_group {
        return Err(Error::InvalidArgument(format!(
            "presence threshold {k} must be between 1 and the smallest group size {min_group}"
        )));
    }
    let groups = design.groups();
    let keep: Vec<usize> = (0..m.nrows())
        .filter(|&i| {
            let mut counts = vec![0usize; design.n_conditions()];
            for (j, _) in m.row_observed(i) {
                counts[groups[j]] += 1;
            }
            counts.iter().all(|&c| c >= k)
        })
        .collect();
    Ok(m.select_rows(&keep))
}

//! Iterative PCA imputation on the whole matrix.
//!
//! Missing cells start at their row mean. Each pass centres the columns,
//! takes the rank-`n_components` truncated SVD and writes the
//! reconstruction back into the missing cells only. This is alternating
//! least squares on the observed cells, so the observed residual sum of
//! squares never increases.

use nalgebra::{DMatrix, RowDVector};

use super::EngineConfig;
use crate::datamodel::{Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::rng::Stream;

fn reconstruct(x: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let (p, n) = x.shape();
    let means = RowDVector::from_iterator(n, (0..n).map(|j| x.column(j).mean()));
    let mut centred = x.clone();
    for i in 0..p {
        let mut row = centred.row_mut(i);
        row -= &means;
    }
    let svd = centred
        .try_svd(true, true, 1e-14, 10_000)
        .ok_or_else(|| Error::engine("pca", "SVD did not converge"))?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    // singular values are not guaranteed sorted
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut recon = DMatrix::zeros(p, n);
    for &c in order.iter().take(rank) {
        let s = svd.singular_values[c];
        recon += u.column(c) * v_t.row(c) * s;
    }
    for i in 0..p {
        let mut row = recon.row_mut(i);
        row += &means;
    }
    Ok(recon)
}

/// Runs the iterations and also returns the observed residual sum of
/// squares after each pass.
pub fn pca_with_trace(m: &IntensityMatrix, cfg: &EngineConfig) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (p, n) = (m.nrows(), m.ncols());
    let rank = cfg.n_components;
    if rank >= n.min(p) {
        return Err(Error::InvalidArgument(format!(
            "n_components {rank} must be below min(rows, columns) = {}",
            n.min(p)
        )));
    }
    let missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|j| (0..p).map(move |i| (i, j)))
        .filter(|&(i, j)| !m.is_observed(i, j))
        .collect();
    let mut x = m.values().clone();
    for i in 0..p {
        let obs: Vec<f64> = m.row_observed(i).map(|(_, v)| v).collect();
        let mean = obs.iter().sum::<f64>() / obs.len().max(1) as f64;
        for j in 0..n {
            if !m.is_observed(i, j) {
                x[(i, j)] = mean;
            }
        }
    }
    let mut trace = Vec::new();
    if missing.is_empty() {
        return Ok((x, trace));
    }
    for _ in 0..cfg.max_iter {
        let recon = reconstruct(&x, rank)?;
        let mut rss = 0.0;
        for j in 0..n {
            for i in 0..p {
                if let Some(v) = m.get(i, j) {
                    rss += (v - recon[(i, j)]).powi(2);
                }
            }
        }
        trace.push(rss);
        let mut change = 0.0;
        let mut scale = 0.0;
        for &(i, j) in &missing {
            change += (recon[(i, j)] - x[(i, j)]).powi(2);
            scale += x[(i, j)].powi(2);
            x[(i, j)] = recon[(i, j)];
        }
        if change <= cfg.tol * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok((x, trace))
}

/// Deterministic: the stream is unused.
pub fn engine_pca(m: &IntensityMatrix, _design: &Design, cfg: &EngineConfig, _rng: &mut Stream) -> Result<DMatrix<f64>> {
    pca_with_trace(m, cfg).map(|(x, _)| x)
}

//! Per-draw cell-means fits and their combination by Rubin's rules.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::datamodel::{fmt_g17, Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::impute::ImputedStack;

/// OLS fit of one completed dataset under the cell-means model.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawFit {
    /// P x I group means.
    pub beta: DMatrix<f64>,
    /// Per-row residual variance RSS / (N - I).
    pub resid_var: Vec<f64>,
    /// Per-row I x I covariance s² (XᵀX)⁻¹.
    pub w: Vec<DMatrix<f64>>,
}

impl DrawFit {
    pub fn nrows(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_conditions(&self) -> usize {
        self.beta.ncols()
    }
}

/// Combined estimates over D draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFit {
    pub row_ids: Vec<String>,
    /// P x I combined group means.
    pub beta: DMatrix<f64>,
    /// Per-row I x I combined covariance.
    pub sigma: Vec<DMatrix<f64>>,
    /// N - I, shared by all rows.
    pub df_resid: usize,
    pub n_draws: usize,
}

impl PooledFit {
    /// Treat a single fit as its own pooled result (Σ = W). This is what
    /// the single-imputation baseline tests with.
    pub fn from_single(row_ids: Vec<String>, fit: DrawFit, df_resid: usize) -> Self {
        Self {
            row_ids,
            beta: fit.beta,
            sigma: fit.w,
            df_resid,
            n_draws: 1,
        }
    }

    pub fn nrows(&self) -> usize {
        self.beta.nrows()
    }
}

/// Group means, pooled within-group variance and its covariance for every
/// row of a complete matrix.
pub fn fit_draw(m: &IntensityMatrix, design: &Design) -> Result<DrawFit> {
    if !m.is_complete() {
        return Err(Error::InvalidMatrix("fit_draw needs a complete matrix".into()));
    }
    if design.n_samples() != m.ncols() {
        return Err(Error::InvalidDesign(format!(
            "design has {} samples, matrix has {} columns",
            design.n_samples(),
            m.ncols()
        )));
    }
    let df = design.residual_df();
    if df == 0 {
        return Err(Error::InvalidDesign("no residual degrees of freedom (N = I)".into()));
    }
    let (p, i_cond) = (m.nrows(), design.n_conditions());
    let groups = design.groups();
    let sizes = design.xtx_diag();
    let inv = design.xtx_inv_diag();
    let values = m.values();

    let rows: Vec<(Vec<f64>, f64)> = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; i_cond];
            for (j, &g) in groups.iter().enumerate() {
                sums[g] += values[(i, j)];
            }
            let means: Vec<f64> = sums.iter().zip(&sizes).map(|(s, n)| s / n).collect();
            let rss: f64 = groups
                .iter()
                .enumerate()
                .map(|(j, &g)| (values[(i, j)] - means[g]).powi(2))
                .sum();
            (means, rss / df as f64)
        })
        .collect();

    let mut beta = DMatrix::zeros(p, i_cond);
    let mut resid_var = Vec::with_capacity(p);
    let mut w = Vec::with_capacity(p);
    for (i, (means, s2)) in rows.into_iter().enumerate() {
        for (k, mu) in means.into_iter().enumerate() {
            beta[(i, k)] = mu;
        }
        w.push(DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            i_cond,
            inv.iter().map(|v| s2 * v),
        )));
        resid_var.push(s2);
    }
    Ok(DrawFit { beta, resid_var, w })
}

fn check_shapes(fits: &[DrawFit]) -> Result<()> {
    let first = fits
        .first()
        .ok_or_else(|| Error::Shape("no draws to combine".into()))?;
    for (d, f) in fits.iter().enumerate() {
        if f.beta.shape() != first.beta.shape() || f.w.len() != first.w.len() {
            return Err(Error::Shape(format!(
                "draw {d} has shape {:?}, draw 0 has {:?}",
                f.beta.shape(),
                first.beta.shape()
            )));
        }
    }
    Ok(())
}

/// First rule: the mean of the per-draw estimates.
pub fn rubin_mean(fits: &[DrawFit]) -> Result<DMatrix<f64>> {
    check_shapes(fits)?;
    let mut acc = DMatrix::zeros(fits[0].nrows(), fits[0].n_conditions());
    for f in fits {
        acc += &f.beta;
    }
    Ok(acc / fits.len() as f64)
}

/// Second rule: mean within-draw covariance plus the between-draw scatter
/// scaled by (D+1)/(D(D-1)).
pub fn rubin_cov(fits: &[DrawFit], beta_bar: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    check_shapes(fits)?;
    let d = fits.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "combining covariances needs at least 2 draws, got {d}"
        )));
    }
    if beta_bar.shape() != fits[0].beta.shape() {
        return Err(Error::Shape("beta_bar does not match the fits".into()));
    }
    let df = d as f64;
    let factor = (df + 1.0) / (df * (df - 1.0));
    let i_cond = beta_bar.ncols();
    Ok((0..beta_bar.nrows())
        .into_par_iter()
        .map(|p| {
            let mut within = DMatrix::zeros(i_cond, i_cond);
            let mut between = DMatrix::zeros(i_cond, i_cond);
            for f in fits {
                within += &f.w[p];
                let dev = f.beta.row(p) - beta_bar.row(p);
                between += dev.transpose() * &dev;
            }
            within / df + between * factor
        })
        .collect())
}

/// Fit every draw of the stack and combine.
pub fn pool(stack: &ImputedStack, design: &Design) -> Result<PooledFit> {
    if stack.len() > 1 && stack.draws_identical() {
        log::warn!(
            "all {} draws are identical; the between-imputation term is zero",
            stack.len()
        );
    }
    let fits = stack
        .draws()
        .par_iter()
        .map(|m| fit_draw(m, design))
        .collect::<Result<Vec<_>>>()?;
    let beta = rubin_mean(&fits)?;
    let sigma = rubin_cov(&fits, &beta)?;
    Ok(PooledFit {
        row_ids: stack.draws()[0].row_ids().to_vec(),
        beta,
        sigma,
        df_resid: design.residual_df(),
        n_draws: stack.len(),
    })
}

/// CSV of β̂ and the diagonal of Σ̂ per row.
pub fn write_pooled(pooled: &PooledFit, design: &Design, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut header = vec!["row_id".to_string()];
    header.extend(design.conditions().iter().map(|c| format!("beta_{c}")));
    header.extend(design.conditions().iter().map(|c| format!("var_{c}")));
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (i, id) in pooled.row_ids.iter().enumerate() {
        let mut cells = vec![id.clone()];
        cells.extend((0..pooled.beta.ncols()).map(|k| fmt_g17(pooled.beta[(i, k)])));
        cells.extend((0..pooled.beta.ncols()).map(|k| fmt_g17(pooled.sigma[i][(k, k)])));
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

//! Maximum-likelihood imputation under a multivariate normal model.
//!
//! Within each condition the samples are the variables and the rows are
//! the observations. The mean vector and covariance matrix are fitted by
//! EM on the incomplete block; missing sub-vectors are then either drawn
//! from, or set to the mean of, their conditional normal given the
//! observed part of the row.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};

use super::EngineConfig;
use crate::datamodel::{Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::rng::Stream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor, adding a ridge of `1e-6 * trace / dim` (growing tenfold
/// on each failure) when the matrix is not numerically positive definite.
pub(crate) fn robust_cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let dim = a.nrows().max(1) as f64;
    let trace = a.trace().abs();
    let mut ridge = 1e-6 * if trace > 0.0 { trace / dim } else { 1.0 };
    for _ in 0..8 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += ridge;
        }
        if let Some(c) = Cholesky::new(b) {
            return Some(c);
        }
        ridge *= 10.0;
    }
    None
}

fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])])
}

/// Rows of one condition block sharing a missingness pattern.
struct Pattern {
    observed: Vec<usize>,
    missing: Vec<usize>,
    rows: Vec<usize>,
}

/// Conditional-normal pieces of a pattern at fixed parameters.
struct Conditional {
    /// Σ_MO Σ_OO⁻¹
    regression: DMatrix<f64>,
    /// Σ_MM − Σ_MO Σ_OO⁻¹ Σ_OM
    cov: DMatrix<f64>,
}

/// Fitted normal model of one condition block.
#[derive(Debug, Clone)]
pub struct MleModel {
    columns: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    /// Observed-data log-likelihood at the parameters entering each iteration.
    pub loglik: Vec<f64>,
}

fn patterns(m: &IntensityMatrix, columns: &[usize]) -> Vec<Pattern> {
    let mut map: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..m.nrows() {
        let key: Vec<bool> = columns.iter().map(|&j| m.is_observed(i, j)).collect();
        map.entry(key).or_default().push(i);
    }
    map.into_iter()
        .map(|(key, rows)| Pattern {
            observed: (0..key.len()).filter(|&c| key[c]).collect(),
            missing: (0..key.len()).filter(|&c| !key[c]).collect(),
            rows,
        })
        .collect()
}

fn conditional(cov: &DMatrix<f64>, pat: &Pattern) -> Result<(Option<Cholesky<f64, Dyn>>, Conditional)> {
    let q = cov.nrows();
    if pat.observed.is_empty() {
        return Ok((
            None,
            Conditional {
                regression: DMatrix::zeros(q, 0),
                cov: cov.clone(),
            },
        ));
    }
    let s_oo = submatrix(cov, &pat.observed, &pat.observed);
    let chol = robust_cholesky(&s_oo)
        .ok_or_else(|| Error::engine("mle", "observed covariance block is not positive definite"))?;
    if pat.missing.is_empty() {
        return Ok((
            Some(chol),
            Conditional {
                regression: DMatrix::zeros(0, pat.observed.len()),
                cov: DMatrix::zeros(0, 0),
            },
        ));
    }
    let s_om = submatrix(cov, &pat.observed, &pat.missing);
    let s_mm = submatrix(cov, &pat.missing, &pat.missing);
    let solved = chol.solve(&s_om); // Σ_OO⁻¹ Σ_OM
    let regression = solved.transpose();
    let c = s_mm - &regression * &s_om;
    let c = (&c + c.transpose()) * 0.5;
    Ok((Some(chol), Conditional { regression, cov: c }))
}

fn row_values(m: &IntensityMatrix, i: usize, columns: &[usize], idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&c| m.values()[(i, columns[c])]))
}

fn standardized_change(old_mean: &DVector<f64>, old_cov: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let q = mean.len();
    let sd: Vec<f64> = (0..q).map(|a| old_cov[(a, a)].max(1e-300).sqrt()).collect();
    let mut worst: f64 = 0.0;
    for a in 0..q {
        worst = worst.max((mean[a] - old_mean[a]).abs() / sd[a]);
        for b in 0..q {
            worst = worst.max((cov[(a, b)] - old_cov[(a, b)]).abs() / (sd[a] * sd[b]));
        }
    }
    worst
}

impl MleModel {
    /// EM fit on the given columns of `m`.
    pub fn fit(m: &IntensityMatrix, columns: &[usize], cfg: &EngineConfig) -> Result<Self> {
        let q = columns.len();
        let p = m.nrows();
        if p < 2 {
            return Err(Error::engine("mle", "need at least two rows to fit a covariance"));
        }
        let mut mean = DVector::zeros(q);
        let mut cov = DMatrix::zeros(q, q);
        for (c, &j) in columns.iter().enumerate() {
            let obs = m.col_observed(j);
            if obs.is_empty() {
                return Err(Error::engine(
                    "mle",
                    format!("sample `{}` has no observed values", m.col_ids()[j]),
                ));
            }
            let mu = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = if obs.len() > 1 {
                obs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / obs.len() as f64
            } else {
                0.0
            };
            mean[c] = mu;
            cov[(c, c)] = var.max(1e-8 * (1.0 + mu * mu));
        }
        let pats = patterns(m, columns);
        let mut loglik = Vec::new();
        let mut iterations = 0;
        loop {
            iterations += 1;
            let mut t1 = DVector::zeros(q);
            let mut t2 = DMatrix::zeros(q, q);
            let mut ll = 0.0;
            for pat in &pats {
                let (chol, cond) = conditional(&cov, pat)?;
                for &i in &pat.rows {
                    let mut y = mean.clone();
                    if let Some(chol) = &chol {
                        let y_o = row_values(m, i, columns, &pat.observed);
                        let mu_o = DVector::from_iterator(pat.observed.len(), pat.observed.iter().map(|&c| mean[c]));
                        let resid = &y_o - &mu_o;
                        let l = chol.l();
                        let z = l.solve_lower_triangular(&resid).expect("triangular solve");
                        let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                        ll -= 0.5 * (pat.observed.len() as f64 * LN_2PI + logdet + z.norm_squared());
                        for (a, &c) in pat.observed.iter().enumerate() {
                            y[c] = y_o[a];
                        }
                        if !pat.missing.is_empty() {
                            let shift = &cond.regression * &resid;
                            for (a, &c) in pat.missing.iter().enumerate() {
                                y[c] = mean[c] + shift[a];
                            }
                        }
                    }
                    t1 += &y;
                    t2 += &y * y.transpose();
                    for (a, &ca) in pat.missing.iter().enumerate() {
                        for (b, &cb) in pat.missing.iter().enumerate() {
                            t2[(ca, cb)] += cond.cov[(a, b)];
                        }
                    }
                }
            }
            if let Some(&prev) = loglik.last() {
                let prev: f64 = prev;
                if ll < prev - 1e-8 * (1.0 + prev.abs()) {
                    return Err(Error::engine(
                        "mle",
                        format!(
                            "EM log-likelihood decreased from {prev} to {ll} at iteration {iterations}"
                        ),
                    ));
                }
            }
            loglik.push(ll);
            let new_mean = &t1 / p as f64;
            let new_cov = &t2 / p as f64 - &new_mean * new_mean.transpose();
            let new_cov = (&new_cov + new_cov.transpose()) * 0.5;
            let change = standardized_change(&mean, &cov, &new_mean, &new_cov);
            mean = new_mean;
            cov = new_cov;
            if change < cfg.tol {
                break;
            }
            if iterations >= cfg.em_max_iter {
                return Err(Error::engine(
                    "mle",
                    format!(
                        "EM did not converge in {iterations} iterations (last standardized change {change:.3e}, tol {})",
                        cfg.tol
                    ),
                ));
            }
        }
        Ok(Self {
            columns: columns.to_vec(),
            mean,
            cov,
            iterations,
            loglik,
        })
    }

    /// One model per condition of the aligned `design`.
    pub fn fit_conditions(m: &IntensityMatrix, design: &Design, cfg: &EngineConfig) -> Result<Vec<MleModel>> {
        (0..design.n_conditions())
            .map(|k| MleModel::fit(m, &design.members(k), cfg))
            .collect()
    }

    /// Fill this block's missing cells of `out`.
    fn fill(&self, m: &IntensityMatrix, out: &mut DMatrix<f64>, deterministic: bool, rng: &mut Stream) {
        for pat in patterns(m, &self.columns) {
            if pat.missing.is_empty() {
                continue;
            }
            let (_, cond) = conditional(&self.cov, &pat).expect("fitted covariance factorizes");
            let noise = if deterministic || cond.cov.trace() <= 0.0 {
                None
            } else {
                robust_cholesky(&cond.cov).map(|c| c.l())
            };
            for &i in &pat.rows {
                let mut fill = DVector::from_iterator(pat.missing.len(), pat.missing.iter().map(|&c| self.mean[c]));
                if !pat.observed.is_empty() {
                    let y_o = row_values(m, i, &self.columns, &pat.observed);
                    let mu_o = DVector::from_iterator(pat.observed.len(), pat.observed.iter().map(|&c| self.mean[c]));
                    fill += &cond.regression * (y_o - mu_o);
                }
                if let Some(l) = &noise {
                    let z = DVector::from_iterator(pat.missing.len(), (0..pat.missing.len()).map(|_| StandardNormal.sample(rng)));
                    fill += l * z;
                }
                for (a, &c) in pat.missing.iter().enumerate() {
                    out[(i, self.columns[c])] = fill[a];
                }
            }
        }
    }

    /// Complete `m` using one fitted model per condition.
    pub fn complete(
        m: &IntensityMatrix,
        _design: &Design,
        models: &[MleModel],
        deterministic: bool,
        rng: &mut Stream,
    ) -> DMatrix<f64> {
        let mut out = m.values().clone();
        for model in models {
            model.fill(m, &mut out, deterministic, rng);
        }
        out
    }
}

pub fn engine_mle(m: &IntensityMatrix, design: &Design, cfg: &EngineConfig, rng: &mut Stream) -> Result<DMatrix<f64>> {
    let models = MleModel::fit_conditions(m, design, cfg)?;
    Ok(MleModel::complete(m, design, &models, cfg.mle_deterministic, rng))
}

//! Bayesian linear regression imputation by chained equations.
//!
//! Within each condition, every sample with missing values is regressed on
//! the other samples of the condition over the rows where it is observed.
//! σ² is drawn from its scaled inverse-χ² posterior, the coefficients from
//! their Gaussian posterior, and the missing entries as Xβ* + ε*.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::mle::robust_cholesky;
use super::EngineConfig;
use crate::datamodel::{Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::rng::Stream;

const RIDGE: f64 = 1e-5;

/// Draw (β*, σ*) for `y ~ x` and return them.
fn posterior_draw(x: &DMatrix<f64>, y: &DVector<f64>, rng: &mut Stream) -> Result<(DVector<f64>, f64)> {
    let n = x.nrows();
    let p = x.ncols();
    let mut xtx = x.transpose() * x;
    for a in 0..p {
        xtx[(a, a)] += RIDGE * xtx[(a, a)];
    }
    let chol = robust_cholesky(&xtx).ok_or_else(|| Error::engine("norm", "singular normal equations"))?;
    let v = chol.inverse();
    let coef = &v * (x.transpose() * y);
    let resid = y - x * &coef;
    let df = n.saturating_sub(p).max(1) as f64;
    let chi: f64 = ChiSquared::new(df).expect("positive df").sample(rng);
    let sigma = (resid.norm_squared() / chi).sqrt();
    let v_sym = (&v + v.transpose()) * 0.5;
    let l = robust_cholesky(&v_sym)
        .ok_or_else(|| Error::engine("norm", "coefficient covariance is not positive definite"))?
        .l();
    let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(rng)));
    Ok((coef + l * z * sigma, sigma))
}

fn design_rows(block: &DMatrix<f64>, rows: &[usize], predictors: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), predictors.len() + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            block[(rows[r], predictors[c - 1])]
        }
    })
}

/// Predictors usable with `n_obs` rows: drop the most-missing ones (ties to
/// the highest index) until `n_obs >= predictors + intercept + 2`.
fn usable_predictors(mut candidates: Vec<usize>, missing_counts: &[usize], n_obs: usize) -> Vec<usize> {
    while !candidates.is_empty() && n_obs < candidates.len() + 1 + 2 {
        let worst = candidates
            .iter()
            .enumerate()
            .max_by_key(|&(_, &c)| (missing_counts[c], c))
            .map(|(pos, _)| pos)
            .expect("non-empty");
        candidates.remove(worst);
    }
    candidates
}

fn impute_block(m: &IntensityMatrix, cols: &[usize], cfg: &EngineConfig, rng: &mut Stream) -> Result<DMatrix<f64>> {
    let p = m.nrows();
    let q = cols.len();
    let observed: Vec<Vec<usize>> = cols
        .iter()
        .map(|&j| (0..p).filter(|&i| m.is_observed(i, j)).collect())
        .collect();
    let missing: Vec<Vec<usize>> = cols
        .iter()
        .map(|&j| (0..p).filter(|&i| !m.is_observed(i, j)).collect())
        .collect();
    let missing_counts: Vec<usize> = missing.iter().map(Vec::len).collect();

    // start from random draws among each sample's observed values
    let mut block = DMatrix::zeros(p, q);
    for (c, &j) in cols.iter().enumerate() {
        if observed[c].is_empty() {
            return Err(Error::engine(
                "norm",
                format!("sample `{}` has no observed values", m.col_ids()[j]),
            ));
        }
        for i in 0..p {
            block[(i, c)] = match m.get(i, j) {
                Some(v) => v,
                None => {
                    let r = observed[c][rng.random_range(0..observed[c].len())];
                    m.values()[(r, j)]
                }
            };
        }
    }

    let targets: Vec<usize> = (0..q).filter(|&c| !missing[c].is_empty()).collect();
    for _ in 0..cfg.max_iter {
        for &c in &targets {
            let others: Vec<usize> = (0..q).filter(|&o| o != c).collect();
            let predictors = usable_predictors(others, &missing_counts, observed[c].len());
            let x_obs = design_rows(&block, &observed[c], &predictors);
            let y = DVector::from_iterator(observed[c].len(), observed[c].iter().map(|&i| block[(i, c)]));
            let (beta, sigma) = posterior_draw(&x_obs, &y, rng)?;
            let x_mis = design_rows(&block, &missing[c], &predictors);
            let fitted = x_mis * beta;
            for (r, &i) in missing[c].iter().enumerate() {
                let eps: f64 = StandardNormal.sample(rng);
                block[(i, c)] = fitted[r] + eps * sigma;
            }
        }
    }
    Ok(block)
}

pub fn engine_norm(m: &IntensityMatrix, design: &Design, cfg: &EngineConfig, rng: &mut Stream) -> Result<DMatrix<f64>> {
    let mut out = m.values().clone();
    for k in 0..design.n_conditions() {
        let cols = design.members(k);
        if cols.iter().all(|&j| (0..m.nrows()).all(|i| m.is_observed(i, j))) {
            continue;
        }
        let block = impute_block(m, &cols, cfg, rng)?;
        for (c, &j) in cols.iter().enumerate() {
            for i in 0..m.nrows() {
                if !m.is_observed(i, j) {
                    out[(i, j)] = block[(i, c)];
                }
            }
        }
    }
    Ok(out)
}

//! Projection of the pooled covariance to one variance per row, the
//! empirical-Bayes prior fit and the moderated variances.

pub mod specfun;

use crate::datamodel::Design;
use crate::error::{Error, Result};
use crate::pool::PooledFit;

use specfun::{digamma_unchecked, trigamma_inverse, trigamma_unchecked};

/// Total degrees of freedom used in place of d_p + ∞.
pub const DF_CAP: f64 = 1e6;

/// Scaled inverse-χ² prior on the row variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbPrior {
    /// Prior degrees of freedom; `f64::INFINITY` when the variances show no
    /// more spread than sampling error alone.
    pub d0: f64,
    pub s0_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModerationFit {
    pub d0: f64,
    pub s0_sq: f64,
    /// Projected variances before moderation.
    pub s_sq: Vec<f64>,
    pub s_tilde_sq: Vec<f64>,
    /// d_p + d0, capped at [`DF_CAP`].
    pub df_total: f64,
}

/// ŝ²_p = max_k Σ̂_p[k,k] · n_k.
pub fn project_variance(pooled: &PooledFit, design: &Design) -> Vec<f64> {
    let xtx = design.xtx_diag();
    pooled
        .sigma
        .iter()
        .map(|s| {
            xtx.iter()
                .enumerate()
                .map(|(k, n)| s[(k, k)] * n)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Moment fit of (d0, s0²) on log s². Zero and non-finite variances are
/// left out of the fit.
pub fn fit_eb_prior(s_sq: &[f64], df: f64) -> Result<EbPrior> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::Domain(format!("residual df must be positive, got {df}")));
    }
    let half = 0.5 * df;
    let shift = digamma_unchecked(half) - half.ln();
    let e: Vec<f64> = s_sq
        .iter()
        .filter(|v| **v > 0.0 && v.is_finite())
        .map(|v| v.ln() - shift)
        .collect();
    if e.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "the prior fit needs at least 2 positive variances, got {}",
            e.len()
        )));
    }
    let n = e.len() as f64;
    let emean = e.iter().sum::<f64>() / n;
    let evar = e.iter().map(|x| (x - emean).powi(2)).sum::<f64>() / (n - 1.0) - trigamma_unchecked(half);
    if evar > 0.0 {
        let d0 = 2.0 * trigamma_inverse(evar)?;
        let s0_sq = (emean + digamma_unchecked(0.5 * d0) - (0.5 * d0).ln()).exp();
        Ok(EbPrior { d0, s0_sq })
    } else {
        Ok(EbPrior {
            d0: f64::INFINITY,
            s0_sq: emean.exp(),
        })
    }
}

/// s̃² = (d ŝ² + d0 s0²) / (d + d0), or s0² when d0 is infinite.
pub fn moderate_variance(s_sq: &[f64], df: f64, d0: f64, s0_sq: f64) -> Vec<f64> {
    s_sq.iter()
        .map(|&s| {
            if d0.is_infinite() {
                s0_sq
            } else {
                (df * s + d0 * s0_sq) / (df + d0)
            }
        })
        .collect()
}

/// Project, fit the prior and moderate in one go.
pub fn moderate(pooled: &PooledFit, design: &Design) -> Result<ModerationFit> {
    let s_sq = project_variance(pooled, design);
    let df = pooled.df_resid as f64;
    let prior = fit_eb_prior(&s_sq, df)?;
    let s_tilde_sq = moderate_variance(&s_sq, df, prior.d0, prior.s0_sq);
    log::info!("prior: d0 = {}, s0^2 = {}", prior.d0, prior.s0_sq);
    Ok(ModerationFit {
        d0: prior.d0,
        s0_sq: prior.s0_sq,
        s_sq,
        s_tilde_sq,
        df_total: (df + prior.d0).min(DF_CAP),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{ChiSquared, Distribution};

    fn pooled_with(sigma: Vec<DMatrix<f64>>, df: usize) -> PooledFit {
        let i = sigma[0].nrows();
        PooledFit {
            row_ids: (0..sigma.len()).map(|p| format!("r{p}")).collect(),
            beta: DMatrix::zeros(sigma.len(), i),
            sigma,
            df_resid: df,
            n_draws: 2,
        }
    }

    #[test]
    fn projection_examples() {
        let d = Design::balanced(&[5, 5]).unwrap();
        let pooled = pooled_with(vec![DMatrix::from_diagonal(&nalgebra::dvector![0.2, 0.6])], 8);
        assert!((project_variance(&pooled, &d)[0] - 3.0).abs() < 1e-12);

        let d1 = Design::balanced(&[4]).unwrap();
        let pooled = pooled_with(vec![DMatrix::from_element(1, 1, 0.7)], 3);
        assert_eq!(project_variance(&pooled, &d1)[0], 0.7 * 4.0);
    }

    #[test]
    fn projection_recovers_ols_variance() {
        let mut rng = rng::stream(3, &[]);
        for _ in 0..50 {
            let i = rng.random_range(2..6);
            let n = rng.random_range(2..8);
            let d = Design::balanced(&vec![n; i]).unwrap();
            let sigma2: f64 = rng.random_range(0.01..10.0);
            let inv = d.xtx_inv_diag();
            let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(i, inv.iter().map(|v| sigma2 * v)));
            let pooled = pooled_with(vec![s], d.residual_df());
            assert!((project_variance(&pooled, &d)[0] - sigma2).abs() <= 1e-12);
        }
    }

    #[test]
    fn equal_variances_give_infinite_prior() {
        let prior = fit_eb_prior(&[2.0; 10], 4.0).unwrap();
        assert!(prior.d0.is_infinite());
        // log-scale bias correction for df = 4: exp(log 2 - ψ(2) + log 2)
        let expected = (2f64.ln() - digamma_unchecked(2.0) + 2f64.ln()).exp();
        assert!((prior.s0_sq - expected).abs() < 1e-12);
        let m = moderate_variance(&[2.0; 10], 4.0, prior.d0, prior.s0_sq);
        assert!(m.iter().all(|&v| v == prior.s0_sq));
    }

    #[test]
    fn too_few_usable_variances() {
        assert!(fit_eb_prior(&[0.0, 0.0, 1.0], 4.0).is_err());
        assert!(fit_eb_prior(&[1.0, 2.0], 0.0).is_err());
    }

    fn sample_prior(d0: f64, s0_sq: f64, df: f64, p: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, &[]);
        let prior = ChiSquared::new(d0).unwrap();
        let within = ChiSquared::new(df).unwrap();
        (0..p)
            .map(|_| {
                let sigma2 = d0 * s0_sq / prior.sample(&mut rng);
                sigma2 * within.sample(&mut rng) / df
            })
            .collect()
    }

    #[test]
    fn recovers_prior_by_monte_carlo() {
        let s = sample_prior(4.0, 1.0, 8.0, 5000, 2024);
        let prior = fit_eb_prior(&s, 8.0).unwrap();
        assert!((prior.d0 - 4.0).abs() <= 1.0, "d0 {}", prior.d0);
        assert!((prior.s0_sq - 1.0).abs() <= 0.1, "s0^2 {}", prior.s0_sq);
    }

    #[test]
    fn scale_equivariance() {
        let s = sample_prior(6.0, 0.5, 5.0, 800, 7);
        let base = fit_eb_prior(&s, 5.0).unwrap();
        for &c in &[0.001, 0.3, 17.0, 1e4] {
            let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
            let fit = fit_eb_prior(&scaled, 5.0).unwrap();
            assert!(((fit.d0 - base.d0) / base.d0).abs() <= 1e-8);
            assert!(((fit.s0_sq - c * base.s0_sq) / (c * base.s0_sq)).abs() <= 1e-8);
        }
    }

    #[test]
    fn moderation_examples() {
        assert_eq!(moderate_variance(&[2.0, 0.5], 8.0, 0.0, 1.0), vec![2.0, 0.5]);
        assert!((moderate_variance(&[2.0], 8.0, 4.0, 1.0)[0] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(moderate_variance(&[2.0], 8.0, f64::INFINITY, 1.3), vec![1.3]);
    }

    #[test]
    fn zero_variance_rows_are_moderated_but_not_fitted() {
        let mut s = sample_prior(4.0, 1.0, 8.0, 200, 1);
        let with_zero = {
            let mut v = s.clone();
            v.push(0.0);
            v
        };
        let a = fit_eb_prior(&s, 8.0).unwrap();
        let b = fit_eb_prior(&with_zero, 8.0).unwrap();
        assert_eq!(a, b);
        s.push(0.0);
        let m = moderate_variance(&s, 8.0, a.d0, a.s0_sq);
        assert!((m[200] - a.d0 * a.s0_sq / (8.0 + a.d0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn shrinkage_direction_and_monotonicity(
            s in prop::collection::vec(0.0f64..50.0, 1..40),
            df in 1.0f64..30.0,
            d0 in 0.0f64..50.0,
            s0 in 0.01f64..20.0,
        ) {
            let m = moderate_variance(&s, df, d0, s0);
            for (&raw, &mod_) in s.iter().zip(&m) {
                let lo = raw.min(s0);
                let hi = raw.max(s0);
                prop_assert!(mod_ >= lo - 1e-12 && mod_ <= hi + 1e-12);
                if d0 > 0.0 {
                    prop_assert_eq!((mod_ - raw).partial_cmp(&0.0).map(|o| o as i8),
                        (s0 - raw).partial_cmp(&0.0).map(|o| o as i8));
                }
            }
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            let ms = moderate_variance(&sorted, df, d0, s0);
            prop_assert!(ms.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

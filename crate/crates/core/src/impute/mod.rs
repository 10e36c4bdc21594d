//! Multiple imputation engines behind one interface.
//!
//! Every engine receives the incomplete matrix, the aligned design, the
//! engine configuration and a keyed random stream, and returns a completed
//! value matrix. Observed entries are copied through untouched; only
//! unobserved cells are written.

mod knn;
mod mle;
mod norm;
mod pca;
mod rf;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::rng::{self, stage, Stream};

pub use knn::engine_knn;
pub use mle::{engine_mle, MleModel};
pub use norm::engine_norm;
pub use pca::{engine_pca, pca_with_trace};
pub use rf::engine_rf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Knn,
    Mle,
    Norm,
    Pca,
    Rf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Knn, Method::Mle, Method::Norm, Method::Pca, Method::Rf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Knn => "knn",
            Method::Mle => "mle",
            Method::Norm => "norm",
            Method::Pca => "pca",
            Method::Rf => "rf",
        }
    }

    fn tag(&self) -> u64 {
        *self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown imputation method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub method: Method,
    pub k_neighbors: usize,
    pub n_components: usize,
    pub rf_trees: usize,
    /// Passes of the iterative engines (norm, pca, rf).
    pub max_iter: usize,
    pub tol: f64,
    /// Iteration cap of the EM fit behind the mle engine.
    pub em_max_iter: usize,
    /// Fill with the conditional mean instead of a conditional draw.
    pub mle_deterministic: bool,
}

impl EngineConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            k_neighbors: 10,
            n_components: 2,
            rf_trees: 100,
            max_iter: 10,
            tol: 1e-4,
            em_max_iter: 1000,
            mle_deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_neighbors", self.k_neighbors),
            ("n_components", self.n_components),
            ("rf_trees", self.rf_trees),
            ("max_iter", self.max_iter),
            ("em_max_iter", self.em_max_iter),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// White's rule of thumb: as many imputations as the percentage of missing values.
pub fn white_rule(missing_fraction: f64) -> usize {
    (100.0 * missing_fraction).round() as usize
}

/// Number of imputations: White's rule floored at 2.
pub fn choose_draw_count(missing_fraction: f64) -> usize {
    white_rule(missing_fraction).max(2)
}

/// D completed copies of one incomplete matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedStack {
    draws: Vec<IntensityMatrix>,
    method: Method,
    seed: u64,
    missing_fraction: f64,
}

impl ImputedStack {
    /// Validate `draws` against `source` and wrap them.
    pub fn new(source: &IntensityMatrix, draws: Vec<IntensityMatrix>, method: Method, seed: u64) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Shape("an imputed stack needs at least one draw".into()));
        }
        for (d, draw) in draws.iter().enumerate() {
            if draw.row_ids() != source.row_ids() || draw.col_ids() != source.col_ids() {
                return Err(Error::Shape(format!("draw {d} does not share the source ids")));
            }
            if !draw.is_complete() {
                return Err(Error::Shape(format!("draw {d} is not complete")));
            }
            for j in 0..source.ncols() {
                for i in 0..source.nrows() {
                    if let Some(v) = source.get(i, j) {
                        if draw.values()[(i, j)].to_bits() != v.to_bits() {
                            return Err(Error::Shape(format!(
                                "draw {d} altered observed cell ({}, {})",
                                source.row_ids()[i],
                                source.col_ids()[j]
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            draws,
            method,
            seed,
            missing_fraction: source.missing_fraction(),
        })
    }

    /// Wrap draws that are already known to be complete and share ids
    /// (used for derived stacks such as protein roll-ups).
    pub fn from_complete_draws(draws: Vec<IntensityMatrix>, method: Method, seed: u64, missing_fraction: f64) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| Error::Shape("an imputed stack needs at least one draw".into()))?;
        for (d, draw) in draws.iter().enumerate() {
            if !draw.is_complete() {
                return Err(Error::Shape(format!("draw {d} is not complete")));
            }
            if draw.row_ids() != first.row_ids() || draw.col_ids() != first.col_ids() {
                return Err(Error::Shape(format!("draw {d} does not share ids with draw 0")));
            }
        }
        Ok(Self {
            draws,
            method,
            seed,
            missing_fraction,
        })
    }

    pub fn draws(&self) -> &[IntensityMatrix] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Missing fraction of the matrix the stack was imputed from.
    pub fn missing_fraction(&self) -> f64 {
        self.missing_fraction
    }

    /// True when every draw equals the first one bit for bit. Pooling such
    /// a stack gives a zero between-imputation term.
    pub fn draws_identical(&self) -> bool {
        let first = self.draws[0].values();
        self.draws[1..].iter().all(|d| {
            d.values()
                .iter()
                .zip(first.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}

/// Every row must keep at least one observed value in every condition.
pub fn check_precondition(m: &IntensityMatrix, design: &Design) -> Result<()> {
    if design.n_samples() != m.ncols() {
        return Err(Error::InvalidDesign(format!(
            "design has {} samples, matrix has {} columns",
            design.n_samples(),
            m.ncols()
        )));
    }
    let groups = design.groups();
    for i in 0..m.nrows() {
        let mut seen = vec![false; design.n_conditions()];
        for (j, _) in m.row_observed(i) {
            seen[groups[j]] = true;
        }
        if let Some(k) = seen.iter().position(|&s| !s) {
            return Err(Error::Precondition {
                row: m.row_ids()[i].clone(),
                message: format!("no observed value in condition `{}`", design.conditions()[k]),
            });
        }
    }
    Ok(())
}

fn run_engine(m: &IntensityMatrix, design: &Design, cfg: &EngineConfig, rng: &mut Stream) -> Result<DMatrix<f64>> {
    match cfg.method {
        Method::Knn => engine_knn(m, design, cfg, rng),
        Method::Mle => engine_mle(m, design, cfg, rng),
        Method::Norm => engine_norm(m, design, cfg, rng),
        Method::Pca => engine_pca(m, design, cfg, rng),
        Method::Rf => engine_rf(m, design, cfg, rng),
    }
}

/// Stream for draw `draw` of an imputation run.
pub fn draw_stream(seed: u64, method: Method, draw: usize) -> Stream {
    rng::stream(seed, &[stage::IMPUTE, method.tag(), draw as u64])
}

/// Impute `m` `n_draws` times, each draw on its own keyed stream.
///
/// `design` must be aligned to the matrix columns.
pub fn impute_multiple(
    m: &IntensityMatrix,
    design: &Design,
    n_draws: usize,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<ImputedStack> {
    cfg.validate()?;
    if n_draws == 0 {
        return Err(Error::InvalidArgument("number of draws must be positive".into()));
    }
    check_precondition(m, design)?;
    if m.is_complete() {
        return ImputedStack::new(m, vec![m.clone(); n_draws], cfg.method, seed);
    }

    let values: Vec<DMatrix<f64>> = if cfg.method == Method::Mle {
        // the EM fit does not depend on the stream; fit once, draw D times
        let models = MleModel::fit_conditions(m, design, cfg)?;
        (0..n_draws)
            .into_par_iter()
            .map(|d| {
                let mut rng = draw_stream(seed, cfg.method, d);
                Ok(MleModel::complete(m, design, &models, cfg.mle_deterministic, &mut rng))
            })
            .collect::<Result<_>>()?
    } else {
        (0..n_draws)
            .into_par_iter()
            .map(|d| {
                let mut rng = draw_stream(seed, cfg.method, d);
                run_engine(m, design, cfg, &mut rng)
            })
            .collect::<Result<_>>()?
    };

    let draws = values
        .into_iter()
        .map(|v| restore_observed(m, v))
        .collect::<Result<Vec<_>>>()?;
    ImputedStack::new(m, draws, cfg.method, seed)
}

/// Copy observed entries back over an engine result and check completeness.
fn restore_observed(m: &IntensityMatrix, mut values: DMatrix<f64>) -> Result<IntensityMatrix> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            match m.get(i, j) {
                Some(v) => values[(i, j)] = v,
                None => {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::Engine {
                            engine: "imputation",
                            message: format!(
                                "non-finite fill at ({}, {})",
                                m.row_ids()[i],
                                m.col_ids()[j]
                            ),
                        });
                    }
                }
            }
        }
    }
    m.with_complete_values(values)
}

/// Observed values with missing cells set to their column's observed mean.
pub(crate) fn mean_filled(m: &IntensityMatrix, cols: &[usize]) -> DMatrix<f64> {
    let p = m.nrows();
    let mut out = DMatrix::zeros(p, cols.len());
    for (c, &j) in cols.iter().enumerate() {
        let obs = m.col_observed(j);
        let mean = if obs.is_empty() {
            0.0
        } else {
            obs.iter().sum::<f64>() / obs.len() as f64
        };
        for i in 0..p {
            out[(i, c)] = m.get(i, j).unwrap_or(mean);
        }
    }
    out
}

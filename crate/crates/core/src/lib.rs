//! Multiple-imputation workflow for differential analysis of incomplete
//! quantitative matrices.
//!
//! A matrix is imputed D times, each completed copy is fitted with a
//! cell-means model, the fits are combined by Rubin's rules, the pooled
//! covariance is projected to one variance per row and moderated with an
//! empirical-Bayes prior, and each one-vs-one contrast is tested with a
//! moderated t-statistic under Benjamini-Hochberg control.

pub mod aggregate;
pub mod datamodel;
pub mod error;
pub mod evaluate;
pub mod impute;
pub mod infer;
pub mod moderate;
pub mod pipeline;
pub mod pool;
pub mod preprocess;
pub mod rng;
pub mod simulate;

pub use datamodel::{Contrast, Design, IntensityMatrix};
pub use error::{Error, Result};
pub use impute::{EngineConfig, ImputedStack, Method};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

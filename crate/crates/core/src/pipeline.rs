//! End-to-end analysis of one matrix: optional preprocessing, multiple
//! imputation, optional protein roll-up, pooling, moderation and tests.

use crate::aggregate::{aggregate_sum, filter_unique};
use crate::datamodel::{Contrast, Design, IntensityMatrix};
use crate::error::Result;
use crate::impute::{choose_draw_count, impute_multiple, white_rule, EngineConfig};
use crate::infer::{test_contrast, ReportHeader, TestReport};
use crate::moderate::{moderate, ModerationFit};
use crate::pool::{pool, PooledFit};
use crate::preprocess::{filter_presence, log2_transform, quantile_normalize};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeConfig {
    pub engine: EngineConfig,
    /// Fixed number of draws; `None` applies the draw-count rule.
    pub draws: Option<usize>,
    pub seed: u64,
    pub fdr: f64,
    pub log2: bool,
    pub normalize: bool,
    /// Minimum observed values per condition, if filtering.
    pub filter_min: Option<usize>,
    pub aggregate: bool,
    pub literal: bool,
    /// Contrasts to test; `None` tests all one-vs-one pairs.
    pub contrasts: Option<Vec<Contrast>>,
}

impl AnalyzeConfig {
    pub fn new(engine: EngineConfig, seed: u64) -> Self {
        Self {
            engine,
            draws: None,
            seed,
            fdr: 0.01,
            log2: false,
            normalize: false,
            filter_min: None,
            aggregate: false,
            literal: false,
            contrasts: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub reports: Vec<TestReport>,
    pub pooled: PooledFit,
    pub moderation: ModerationFit,
    pub design: Design,
    pub n_draws: usize,
    /// Value of the draw-count rule before the floor at 2.
    pub rule_draws: usize,
    pub identical_draws: bool,
}

/// Apply the preprocessing steps selected in `cfg`.
pub fn preprocess(m: &IntensityMatrix, design: &Design, cfg: &AnalyzeConfig) -> Result<IntensityMatrix> {
    let mut m = if cfg.log2 { log2_transform(m)? } else { m.clone() };
    if cfg.normalize {
        m = quantile_normalize(&m)?;
    }
    if let Some(k) = cfg.filter_min {
        m = filter_presence(&m, design, k)?;
    }
    if cfg.aggregate {
        m = filter_unique(&m)?;
    }
    Ok(m)
}

pub fn analyze(m: &IntensityMatrix, design: &Design, cfg: &AnalyzeConfig) -> Result<Analysis> {
    let design = design.aligned_to(m)?;
    let m = preprocess(m, &design, cfg)?;
    let missing = m.missing_fraction();
    let rule_draws = white_rule(missing);
    let n_draws = cfg.draws.unwrap_or_else(|| choose_draw_count(missing));
    if cfg.draws.is_none() && rule_draws < n_draws {
        log::info!("draw-count rule gives {rule_draws} at {missing} missing; using {n_draws}");
    }
    let mut stack = impute_multiple(&m, &design, n_draws, &cfg.engine, cfg.seed)?;
    if cfg.aggregate {
        stack = aggregate_sum(&stack)?;
    }
    let identical_draws = stack.len() > 1 && stack.draws_identical();
    let pooled = pool(&stack, &design)?;
    let moderation = moderate(&pooled, &design)?;
    let header = ReportHeader {
        d0: moderation.d0,
        s0_sq: moderation.s0_sq,
        n_draws,
        method: cfg.engine.method.to_string(),
        seed: cfg.seed,
        threshold: cfg.fdr,
    };
    let contrasts = cfg
        .contrasts
        .clone()
        .unwrap_or_else(|| Contrast::all_pairs(design.n_conditions()));
    let reports = contrasts
        .into_iter()
        .map(|c| test_contrast(&pooled, &moderation, &design, c, cfg.literal, header.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        reports,
        pooled,
        moderation,
        design,
        n_draws,
        rule_draws,
        identical_draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::Method;
    use crate::simulate::{ampute_mcar_grouped, gen_sim1};
    use nalgebra::DMatrix;

    #[test]
    fn sim1_end_to_end() {
        let (full, d, truth) = gen_sim1(21).unwrap();
        let m = ampute_mcar_grouped(&full, &d, 0.1, 22).unwrap();
        let out = analyze(&m, &d, &AnalyzeConfig::new(EngineConfig::new(Method::Mle), 3)).unwrap();
        assert_eq!(out.n_draws, 10);
        assert_eq!(out.reports.len(), 1);
        let r = &out.reports[0];
        assert_eq!(r.row_ids.len(), 200);
        assert!(truth.de_rows.iter().zip(&r.decided).all(|(t, d)| !t || *d));
    }

    #[test]
    fn complete_input_floors_draws() {
        let (m, d, _) = gen_sim1(1).unwrap();
        let out = analyze(&m, &d, &AnalyzeConfig::new(EngineConfig::new(Method::Knn), 3)).unwrap();
        assert_eq!(out.n_draws, 2);
        assert_eq!(out.rule_draws, 0);
        assert!(out.identical_draws);
    }

    #[test]
    fn aggregation_runs_before_pooling() {
        let d = Design::balanced(&[3, 3]).unwrap();
        let values = DMatrix::from_fn(6, 6, |i, j| 10.0 + i as f64 + if j >= 3 { 0.3 * (j as f64) } else { 0.1 * j as f64 });
        let m = IntensityMatrix::complete((0..6).map(|i| format!("pep{i}")).collect(), d.samples().to_vec(), values)
            .unwrap()
            .with_protein_ids(["A", "A", "B", "B;C", "C", "C"].iter().map(|s| s.to_string()).collect())
            .unwrap();
        let mut cfg = AnalyzeConfig::new(EngineConfig::new(Method::Knn), 1);
        cfg.aggregate = true;
        let out = analyze(&m, &d, &cfg).unwrap();
        // the shared peptide is dropped, then three proteins are pooled
        assert_eq!(out.pooled.row_ids, ["A", "B", "C"]);
        assert_eq!(out.reports[0].row_ids.len(), 3);
    }
}

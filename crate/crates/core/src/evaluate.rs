//! Confusion counts, classification metrics and the simulation benchmark
//! comparing the multiple-imputation workflow with single imputation.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{fmt_g17, Contrast, Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::impute::{choose_draw_count, impute_multiple, EngineConfig, ImputedStack};
use crate::infer::{test_contrast, ReportHeader, TestReport};
use crate::moderate::moderate;
use crate::pool::{fit_draw, pool, PooledFit};
use crate::preprocess::quantile_normalize;
use crate::rng::{derive_seed, stage};
use crate::simulate::{ampute_mcar_grouped, SimSpec, SimTruth};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(decisions: &[bool], truth: &SimTruth) -> Result<ConfusionCounts> {
    if decisions.len() != truth.de_rows.len() {
        return Err(Error::Shape(format!(
            "{} decisions for {} truth labels",
            decisions.len(),
            truth.de_rows.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&d, &t) in decisions.iter().zip(&truth.de_rows) {
        match (d, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Classification metrics; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f_score: Option<f64>,
    pub mcc: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let mcc_den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    Metrics {
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        precision: ratio(tp, tp + fp),
        f_score: ratio(tp, tp + 0.5 * (fp + fn_)),
        mcc: ratio(tp * tn - fp * fn_, mcc_den.sqrt()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workflow {
    Mi4p,
    Baseline,
}

impl fmt::Display for Workflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Workflow::Mi4p => "mi4p",
            Workflow::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub design_id: u8,
    pub replicates: usize,
    pub mv_grid: Vec<f64>,
    pub engine: EngineConfig,
    /// BH threshold on adjusted p-values.
    pub fdr: f64,
    pub seed: u64,
    /// Fixed number of draws; `None` applies the draw-count rule.
    pub draws: Option<usize>,
    pub literal: bool,
    pub normalize: bool,
}

impl BenchConfig {
    pub fn new(design_id: u8, replicates: usize, mv_grid: Vec<f64>, engine: EngineConfig, seed: u64) -> Self {
        Self {
            design_id,
            replicates,
            mv_grid,
            engine,
            fdr: 0.01,
            seed,
            draws: None,
            literal: false,
            normalize: false,
        }
    }
}

/// One (replicate, fraction, workflow) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub design_id: u8,
    pub replicate: usize,
    pub mv_fraction: f64,
    pub method: String,
    pub workflow: Workflow,
    pub n_draws: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub d0: f64,
    pub s0_sq: f64,
}

/// Mean and sample sd of one metric over replicates where it is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

impl MetricSummary {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        let n = defined.len();
        let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
        let sd = mean.filter(|_| n > 1).map(|m| {
            (defined.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self {
            mean,
            sd,
            n_defined: n,
            n_undefined: undefined,
        }
    }
}

pub const SUMMARY_METRICS: [&str; 9] = [
    "tp",
    "fp",
    "tn",
    "fn",
    "sensitivity",
    "specificity",
    "precision",
    "f_score",
    "mcc",
];

fn metric_value(r: &ReplicateResult, name: &str) -> Option<f64> {
    match name {
        "tp" => Some(r.counts.tp as f64),
        "fp" => Some(r.counts.fp as f64),
        "tn" => Some(r.counts.tn as f64),
        "fn" => Some(r.counts.fn_ as f64),
        "sensitivity" => r.metrics.sensitivity,
        "specificity" => r.metrics.specificity,
        "precision" => r.metrics.precision,
        "f_score" => r.metrics.f_score,
        "mcc" => r.metrics.mcc,
        _ => None,
    }
}

/// All replicates of one (fraction, workflow) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub design_id: u8,
    pub mv_fraction: f64,
    pub method: String,
    pub workflow: Workflow,
    pub replicates: Vec<ReplicateResult>,
}

impl BenchResult {
    pub fn summary(&self, metric: &str) -> MetricSummary {
        MetricSummary::of(self.replicates.iter().map(|r| metric_value(r, metric)))
    }
}

/// Moderate and test the single two-condition contrast.
fn score(
    pooled: &PooledFit,
    design: &Design,
    truth: &SimTruth,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<(TestReport, ConfusionCounts)> {
    let moderation = moderate(pooled, design)?;
    let header = ReportHeader {
        d0: moderation.d0,
        s0_sq: moderation.s0_sq,
        n_draws: pooled.n_draws,
        method: cfg.engine.method.to_string(),
        seed,
        threshold: cfg.fdr,
    };
    let contrast = Contrast::new(0, 1, design.n_conditions())?;
    let report = test_contrast(pooled, &moderation, design, contrast, cfg.literal, header)?;
    let counts = confusion(&report.decided, truth)?;
    Ok((report, counts))
}

fn result_row(
    cfg: &BenchConfig,
    replicate: usize,
    mv: f64,
    workflow: Workflow,
    report: &TestReport,
    counts: ConfusionCounts,
) -> ReplicateResult {
    ReplicateResult {
        design_id: cfg.design_id,
        replicate,
        mv_fraction: mv,
        method: cfg.engine.method.to_string(),
        workflow,
        n_draws: report.header.n_draws,
        counts,
        metrics: metrics(&counts),
        d0: report.header.d0,
        s0_sq: report.header.s0_sq,
    }
}

/// Both workflows on one simulated, amputed dataset.
pub fn run_replicate(cfg: &BenchConfig, replicate: usize, mv: f64) -> Result<[ReplicateResult; 2]> {
    let rep = replicate as u64;
    let mv_key = mv.to_bits();
    let sim_seed = derive_seed(cfg.seed, &[stage::BENCH, stage::SIMULATE, cfg.design_id as u64, rep]);
    let (full, design, truth) = SimSpec::new(cfg.design_id, sim_seed)?.generate()?;
    let amputed = if mv > 0.0 {
        let seed = derive_seed(cfg.seed, &[stage::BENCH, stage::AMPUTE, rep, mv_key]);
        ampute_mcar_grouped(&full, &design, mv, seed)?
    } else {
        full
    };
    let m: IntensityMatrix = if cfg.normalize {
        quantile_normalize(&amputed)?
    } else {
        amputed
    };

    let n_draws = cfg.draws.unwrap_or_else(|| choose_draw_count(m.missing_fraction()));
    let mi_seed = derive_seed(cfg.seed, &[stage::BENCH, stage::IMPUTE, rep, mv_key]);
    let stack = impute_multiple(&m, &design, n_draws, &cfg.engine, mi_seed)?;
    let pooled = pool(&stack, &design)?;
    let (report, counts) = score(&pooled, &design, &truth, cfg, mi_seed)?;
    let mi = result_row(cfg, replicate, mv, Workflow::Mi4p, &report, counts);

    let base_seed = derive_seed(cfg.seed, &[stage::BENCH, stage::BASELINE, rep, mv_key]);
    let single: ImputedStack = impute_multiple(&m, &design, 1, &cfg.engine, base_seed)?;
    let fit = fit_draw(&single.draws()[0], &design)?;
    let pooled = PooledFit::from_single(m.row_ids().to_vec(), fit, design.residual_df());
    let (report, counts) = score(&pooled, &design, &truth, cfg, base_seed)?;
    let base = result_row(cfg, replicate, mv, Workflow::Baseline, &report, counts);
    Ok([mi, base])
}

/// Every replicate at every fraction. Replicates run in parallel on
/// keyed streams; the output order is fixed.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    cfg.engine.validate()?;
    SimSpec::new(cfg.design_id, cfg.seed)?;
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    if let Some(bad) = cfg.mv_grid.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Error::InvalidArgument(format!("missing fraction {bad} outside [0, 1)")));
    }
    let mut out = Vec::new();
    for &mv in &cfg.mv_grid {
        let pairs = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, r, mv))
            .collect::<Result<Vec<_>>>()?;
        for (w, workflow) in [Workflow::Mi4p, Workflow::Baseline].into_iter().enumerate() {
            out.push(BenchResult {
                design_id: cfg.design_id,
                mv_fraction: mv,
                method: cfg.engine.method.to_string(),
                workflow,
                replicates: pairs.iter().map(|p| p[w].clone()).collect(),
            });
        }
        log::info!("design {} at {} missing: done", cfg.design_id, mv);
    }
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), fmt_g17)
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        fmt_g17(x)
    }
}

/// One line per (replicate, fraction, workflow).
pub fn write_results_to<W: Write>(results: &[BenchResult], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "design,mv,method,workflow,replicate,draws,tp,fp,tn,fn,sensitivity,specificity,precision,f_score,mcc,d0,s0_sq"
    )?;
    for b in results {
        for r in &b.replicates {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.design_id,
                fmt_g17(r.mv_fraction),
                r.method,
                r.workflow,
                r.replicate,
                r.n_draws,
                r.counts.tp,
                r.counts.fp,
                r.counts.tn,
                r.counts.fn_,
                opt(r.metrics.sensitivity),
                opt(r.metrics.specificity),
                opt(r.metrics.precision),
                opt(r.metrics.f_score),
                opt(r.metrics.mcc),
                num(r.d0),
                num(r.s0_sq)
            )?;
        }
    }
    out.flush()
}

/// Mean and sd of every metric per (fraction, workflow).
pub fn write_summary_to<W: Write>(results: &[BenchResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "design,mv,method,workflow,metric,mean,sd,n,n_undefined")?;
    for b in results {
        for metric in SUMMARY_METRICS {
            let s = b.summary(metric);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                b.design_id,
                fmt_g17(b.mv_fraction),
                b.method,
                b.workflow,
                metric,
                opt(s.mean),
                opt(s.sd),
                s.n_defined,
                s.n_undefined
            )?;
        }
    }
    out.flush()
}

fn write_file(path: &Path, f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_results(results: &[BenchResult], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), |w| write_results_to(results, w))
}

pub fn write_summary(results: &[BenchResult], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), |w| write_summary_to(results, w))
}

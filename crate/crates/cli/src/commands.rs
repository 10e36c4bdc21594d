use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mipipe::aggregate::{aggregate_sum, filter_unique};
use mipipe::datamodel::{fmt_g17, read_design, read_matrix, write_design, write_matrix, ReadOptions};
use mipipe::evaluate::{bench, confusion, metrics, write_results, write_summary, BenchConfig};
use mipipe::impute::{choose_draw_count, impute_multiple, white_rule};
use mipipe::infer::{read_decisions, write_reports};
use mipipe::pipeline::{analyze, AnalyzeConfig};
use mipipe::pool::write_pooled;
use mipipe::preprocess::{filter_presence, log2_transform, quantile_normalize};
use mipipe::simulate::{ampute_mcar, ampute_mcar_grouped, read_truth, write_truth, SimSpec, SimTruth};
use mipipe::{Contrast, Design, IntensityMatrix};

use crate::manifest::{read_stack, write_run_manifest, write_stack};
use crate::{
    AggregateArgs, AmputeArgs, AnalyzeArgs, BenchArgs, Command, EvaluateArgs, FilterArgs, ImputeArgs, MatrixIn,
    NormalizeArgs, SimulateArgs,
};

pub(crate) fn run(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(command, a),
        Command::Ampute(a) => ampute(command, a),
        Command::Normalize(a) => normalize(command, a),
        Command::Filter(a) => filter(command, a),
        Command::Impute(a) => impute(command, a),
        Command::Analyze(a) => run_analyze(command, a),
        Command::Aggregate(a) => aggregate(command, a),
        Command::Evaluate(a) => evaluate(command, a),
        Command::Bench(a) => run_bench(command, a),
    }
}

fn load_matrix(m: &MatrixIn) -> Result<IntensityMatrix> {
    let options = ReadOptions {
        protein_column: m.protein_column,
    };
    read_matrix(&m.input, options).with_context(|| format!("reading matrix {}", m.input.display()))
}

fn load_design(path: &Path, m: &IntensityMatrix) -> Result<Design> {
    let design = read_design(path).with_context(|| format!("reading design {}", path.display()))?;
    Ok(design.aligned_to(m)?)
}

fn save_matrix(m: &IntensityMatrix, path: &Path) -> Result<()> {
    write_matrix(m, path).with_context(|| format!("writing {}", path.display()))
}

fn simulate(command: &Command, a: &SimulateArgs) -> Result<()> {
    let (m, design, truth) = SimSpec::new(a.design, a.seed)?.generate().context("simulate")?;
    save_matrix(&m, &a.out)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(p) = &a.design_out {
        write_design(&design, p)?;
        outputs.push(p);
    }
    if let Some(p) = &a.truth_out {
        write_truth(&truth, m.row_ids(), p)?;
        outputs.push(p);
    }
    log::info!(
        "design {}: {} rows, {} samples, {} differential",
        a.design,
        m.nrows(),
        m.ncols(),
        truth.n_de()
    );
    write_run_manifest(command, Some(a.seed), &[], &outputs, &a.out)
}

fn ampute(command: &Command, a: &AmputeArgs) -> Result<()> {
    let m = load_matrix(&a.matrix)?;
    let out = match &a.design {
        Some(p) => {
            let design = load_design(p, &m)?;
            ampute_mcar_grouped(&m, &design, a.prop, a.seed)
        }
        None => ampute_mcar(&m, a.prop, a.seed),
    }
    .context("ampute")?;
    log::info!("{} of {} cells now missing", out.n_missing(), out.nrows() * out.ncols());
    save_matrix(&out, &a.out)?;
    let mut inputs = vec![a.matrix.input.as_path()];
    inputs.extend(a.design.as_deref());
    write_run_manifest(command, Some(a.seed), &inputs, &[&a.out], &a.out)
}

fn normalize(command: &Command, a: &NormalizeArgs) -> Result<()> {
    let mut m = load_matrix(&a.matrix)?;
    if a.log2 {
        m = log2_transform(&m).context("log2")?;
    }
    let m = quantile_normalize(&m).context("normalize")?;
    save_matrix(&m, &a.out)?;
    write_run_manifest(command, None, &[&a.matrix.input], &[&a.out], &a.out)
}

fn filter(command: &Command, a: &FilterArgs) -> Result<()> {
    let m = load_matrix(&a.matrix)?;
    let design = load_design(&a.design, &m)?;
    let mut out = filter_presence(&m, &design, a.min_obs).context("filter")?;
    if a.unique_peptides {
        out = filter_unique(&out).context("filter")?;
    }
    log::info!("kept {} of {} rows", out.nrows(), m.nrows());
    save_matrix(&out, &a.out)?;
    write_run_manifest(command, None, &[&a.matrix.input, &a.design], &[&a.out], &a.out)
}

fn draw_count(fixed: Option<usize>, missing: f64) -> usize {
    match fixed {
        Some(d) => d,
        None => {
            let d = choose_draw_count(missing);
            if white_rule(missing) < d {
                log::info!(
                    "{:.2}% missing gives {} draws by the rule of thumb; raised to {d}",
                    100.0 * missing,
                    white_rule(missing)
                );
            }
            d
        }
    }
}

fn impute(command: &Command, a: &ImputeArgs) -> Result<()> {
    let m = load_matrix(&a.matrix)?;
    let design = load_design(&a.design, &m)?;
    let cfg = a.engine.config();
    let d = draw_count(a.draws.fixed(), m.missing_fraction());
    let stack = impute_multiple(&m, &design, d, &cfg, a.seed).context("impute")?;
    if stack.len() > 1 && stack.draws_identical() {
        log::warn!("all {d} draws are identical; between-imputation variance is zero");
    }
    write_stack(&stack, Some(&cfg), false, &a.out)?;
    log::info!("wrote {d} draws with {}", cfg.method);
    write_run_manifest(command, Some(a.seed), &[&a.matrix.input, &a.design], &[&a.out], &a.out)
}

fn resolve_contrasts(pairs: &[(String, String)], design: &Design) -> Result<Option<Vec<Contrast>>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let index = |label: &str| {
        design
            .condition_index(label)
            .ok_or_else(|| anyhow!("condition `{label}` is not in the design"))
    };
    pairs
        .iter()
        .map(|(a, b)| Ok(Contrast::new(index(a)?, index(b)?, design.n_conditions())?))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn run_analyze(command: &Command, a: &AnalyzeArgs) -> Result<()> {
    let m = load_matrix(&a.matrix)?;
    let design = load_design(&a.design, &m)?;
    let cfg = AnalyzeConfig {
        engine: a.engine.config(),
        draws: a.draws.fixed(),
        seed: a.seed,
        fdr: a.fdr,
        log2: a.log2,
        normalize: a.normalize,
        filter_min: a.filter,
        aggregate: a.aggregate,
        literal: a.literal,
        contrasts: resolve_contrasts(&a.contrast, &design)?,
    };
    let out = analyze(&m, &design, &cfg).context("analyze")?;
    if a.draws.fixed().is_none() && out.rule_draws < out.n_draws {
        log::info!(
            "rule of thumb gives {} draws; floored to {}",
            out.rule_draws,
            out.n_draws
        );
    }
    if out.identical_draws {
        log::warn!("all {} draws are identical; between-imputation variance is zero", out.n_draws);
    }
    log::info!(
        "prior d0={} s0^2={}; {} draws",
        fmt_g17(out.moderation.d0),
        fmt_g17(out.moderation.s0_sq),
        out.n_draws
    );
    for r in &out.reports {
        log::info!("{}: {} of {} rows called", r.contrast_label, r.n_decided(), r.row_ids.len());
    }
    write_reports(&out.reports, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(p) = &a.dump_pooled {
        write_pooled(&out.pooled, &out.design, p)?;
        outputs.push(p);
    }
    write_run_manifest(command, Some(a.seed), &[&a.matrix.input, &a.design], &outputs, &a.out)
}

fn aggregate(command: &Command, a: &AggregateArgs) -> Result<()> {
    let (manifest, stack) = read_stack(&a.input)?;
    if !manifest.protein_column {
        bail!("{} has no protein ids", a.input.display());
    }
    let filtered = stack
        .draws()
        .iter()
        .map(filter_unique)
        .collect::<mipipe::Result<Vec<_>>>()
        .context("aggregate")?;
    let filtered = mipipe::ImputedStack::from_complete_draws(
        filtered,
        stack.method(),
        stack.seed(),
        stack.missing_fraction(),
    )?;
    let proteins = aggregate_sum(&filtered).context("aggregate")?;
    log::info!(
        "{} peptides rolled up to {} proteins",
        stack.draws()[0].nrows(),
        proteins.draws()[0].nrows()
    );
    write_stack(&proteins, manifest.config.as_ref(), true, &a.out)?;
    write_run_manifest(command, Some(manifest.seed), &[&a.input], &[&a.out], &a.out)
}

fn na_or(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_else(|| "NA".into())
}

fn evaluate(command: &Command, a: &EvaluateArgs) -> Result<()> {
    let (ids, truth) = read_truth(&a.truth).with_context(|| format!("reading truth {}", a.truth.display()))?;
    let labels: std::collections::HashMap<&str, bool> =
        ids.iter().map(String::as_str).zip(truth.de_rows.iter().copied()).collect();
    let reports = read_decisions(&a.report).with_context(|| format!("reading report {}", a.report.display()))?;
    if reports.is_empty() {
        bail!("{} has no rows", a.report.display());
    }
    let file = fs::File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "contrast,tp,fp,tn,fn,sensitivity,specificity,precision,f_score,mcc")?;
    for r in &reports {
        let de_rows = r
            .row_ids
            .iter()
            .map(|id| {
                labels
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| anyhow!("row `{id}` has no truth label"))
            })
            .collect::<Result<Vec<_>>>()?;
        if de_rows.len() < ids.len() {
            log::warn!(
                "{}: {} of {} labelled rows are not in the report",
                r.contrast_label,
                ids.len() - de_rows.len(),
                ids.len()
            );
        }
        let c = confusion(&r.decided, &SimTruth { de_rows })?;
        let mt = metrics(&c);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.contrast_label,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            na_or(mt.sensitivity),
            na_or(mt.specificity),
            na_or(mt.precision),
            na_or(mt.f_score),
            na_or(mt.mcc)
        )?;
        log::info!(
            "{}: TP {} FP {} TN {} FN {}",
            r.contrast_label,
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        );
    }
    w.flush()?;
    drop(w);
    write_run_manifest(command, None, &[&a.report, &a.truth], &[&a.out], &a.out)
}

fn default_summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn run_bench(command: &Command, a: &BenchArgs) -> Result<()> {
    if a.reps == 0 {
        bail!("--reps must be positive");
    }
    let mut cfg = BenchConfig::new(a.design, a.reps, a.mv.clone(), a.engine.config(), a.seed);
    cfg.fdr = a.fdr;
    cfg.draws = a.draws.fixed();
    cfg.literal = a.literal;
    cfg.normalize = a.normalize;
    let results = bench(&cfg).context("bench")?;
    for b in &results {
        let s = b.summary("sensitivity");
        let f = b.summary("f_score");
        log::info!(
            "mv {} {}: sensitivity {} F {}",
            fmt_g17(b.mv_fraction),
            b.workflow,
            na_or(s.mean),
            na_or(f.mean)
        );
    }
    let summary = a.summary_out.clone().unwrap_or_else(|| default_summary_path(&a.out));
    write_results(&results, &a.out)?;
    write_summary(&results, &summary)?;
    write_run_manifest(command, Some(a.seed), &[], &[&a.out, &summary], &a.out)
}

//! Moderated t-tests for one-vs-one contrasts, BH adjustment and
//! decisions.

use std::io::Write;
use std::path::Path;

use crate::datamodel::{fmt_g17, Contrast, Design};
use crate::error::{Error, Result};
use crate::moderate::specfun::t_two_sided_p;
use crate::moderate::ModerationFit;
use crate::pool::PooledFit;

/// Run-level values written as `#` lines above the report table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportHeader {
    pub d0: f64,
    pub s0_sq: f64,
    pub n_draws: usize,
    pub method: String,
    pub seed: u64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub header: ReportHeader,
    pub contrast: Contrast,
    /// "A-B" label of the contrast.
    pub contrast_label: String,
    pub row_ids: Vec<String>,
    pub logfc: Vec<f64>,
    pub t: Vec<f64>,
    pub df: f64,
    pub p: Vec<f64>,
    pub p_adj: Vec<f64>,
    pub decided: Vec<bool>,
}

impl TestReport {
    pub fn n_decided(&self) -> usize {
        self.decided.iter().filter(|&&d| d).count()
    }
}

/// Moderated t statistics and their degrees of freedom for contrast a - b.
///
/// With `literal` the denominator uses s̃² instead of s̃. A zero moderated
/// variance gives ±∞ for a nonzero difference and 0 for a zero one.
pub fn moderated_t(
    pooled: &PooledFit,
    moderation: &ModerationFit,
    design: &Design,
    contrast: Contrast,
    literal: bool,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let i_cond = design.n_conditions();
    if contrast.a() >= i_cond || contrast.b() >= i_cond {
        return Err(Error::InvalidArgument(format!(
            "contrast ({}, {}) outside {i_cond} conditions",
            contrast.a(),
            contrast.b()
        )));
    }
    if moderation.s_tilde_sq.len() != pooled.nrows() {
        return Err(Error::Shape("moderation and pooled fit disagree on row count".into()));
    }
    let inv = design.xtx_inv_diag();
    let scale = (inv[contrast.a()] + inv[contrast.b()]).sqrt();
    let mut logfc = Vec::with_capacity(pooled.nrows());
    let mut t = Vec::with_capacity(pooled.nrows());
    for (p, &s2) in moderation.s_tilde_sq.iter().enumerate() {
        let diff = pooled.beta[(p, contrast.a())] - pooled.beta[(p, contrast.b())];
        let spread = if literal { s2 } else { s2.sqrt() };
        let stat = if diff == 0.0 { 0.0 } else { diff / (spread * scale) };
        logfc.push(diff);
        t.push(stat);
    }
    Ok((logfc, t, moderation.df_total))
}

pub fn pvalue(t: f64, df: f64) -> Result<f64> {
    t_two_sided_p(t, df)
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        // m p / m is p; computing it would round below p for some inputs
        let scaled = if rank + 1 == m { p[i] } else { p[i] * m as f64 / (rank + 1) as f64 };
        running = running.min(scaled);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// `p_adj <= threshold`, boundary included.
pub fn decide(p_adj: &[f64], threshold: f64) -> Vec<bool> {
    p_adj.iter().map(|&q| q <= threshold).collect()
}

/// Full test of one contrast.
pub fn test_contrast(
    pooled: &PooledFit,
    moderation: &ModerationFit,
    design: &Design,
    contrast: Contrast,
    literal: bool,
    header: ReportHeader,
) -> Result<TestReport> {
    let (logfc, t, df) = moderated_t(pooled, moderation, design, contrast, literal)?;
    let p = t.iter().map(|&x| pvalue(x, df)).collect::<Result<Vec<_>>>()?;
    let p_adj = bh_adjust(&p)?;
    let decided = decide(&p_adj, header.threshold);
    Ok(TestReport {
        contrast_label: contrast.label(design),
        header,
        contrast,
        row_ids: pooled.row_ids.clone(),
        logfc,
        t,
        df,
        p,
        p_adj,
        decided,
    })
}

fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "Inf".into()
    } else if x == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        fmt_g17(x)
    }
}

/// Write one table for any number of contrasts sharing a header.
pub fn write_reports_to<W: Write>(reports: &[TestReport], mut out: W) -> std::io::Result<()> {
    if let Some(first) = reports.first() {
        let h = &first.header;
        writeln!(out, "# d0={}", fmt_num(h.d0))?;
        writeln!(out, "# s0_sq={}", fmt_num(h.s0_sq))?;
        writeln!(out, "# draws={}", h.n_draws)?;
        writeln!(out, "# method={}", h.method)?;
        writeln!(out, "# seed={}", h.seed)?;
        writeln!(out, "# threshold={}", fmt_num(h.threshold))?;
    }
    writeln!(out, "row_id,contrast,logfc,t,df,p,p_adj,decided")?;
    for r in reports {
        for i in 0..r.row_ids.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.row_ids[i],
                r.contrast_label,
                fmt_num(r.logfc[i]),
                fmt_num(r.t[i]),
                fmt_num(r.df),
                fmt_num(r.p[i]),
                fmt_num(r.p_adj[i]),
                r.decided[i]
            )?;
        }
    }
    out.flush()
}

pub fn write_reports(reports: &[TestReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_reports_to(reports, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Decisions of one contrast as read back from a report file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportDecisions {
    pub contrast_label: String,
    pub row_ids: Vec<String>,
    pub decided: Vec<bool>,
}

/// Read the decision column of a report, grouped by contrast in file order.
pub fn read_decisions(path: impl AsRef<Path>) -> Result<Vec<ReportDecisions>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(std::io::BufReader::new(file));
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("report has no `{name}` column")))
    };
    let (id_col, contrast_col, decided_col) = (col("row_id")?, col("contrast")?, col("decided")?);
    let mut out: Vec<ReportDecisions> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let id = record.get(id_col).unwrap_or("").to_string();
        let label = record.get(contrast_col).unwrap_or("");
        let decided = match record.get(decided_col).unwrap_or("") {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Parse {
                    row: id,
                    column: "decided".into(),
                    message: format!("`{other}` is not a boolean"),
                })
            }
        };
        if out.last().is_none_or(|r| r.contrast_label != label) {
            out.push(ReportDecisions {
                contrast_label: label.to_string(),
                row_ids: Vec::new(),
                decided: Vec::new(),
            });
        }
        let r = out.last_mut().expect("pushed above");
        r.row_ids.push(id);
        r.decided.push(decided);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::IntensityMatrix;
    use crate::impute::{ImputedStack, Method};
    use crate::moderate::moderate;
    use crate::pool::pool;
    use crate::rng;
    use crate::simulate::gen_sim1;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn fixture(beta: &[[f64; 2]], s_tilde: &[f64], design: &Design, df_total: f64) -> (PooledFit, ModerationFit) {
        let p = beta.len();
        let pooled = PooledFit {
            row_ids: (0..p).map(|i| format!("r{i}")).collect(),
            beta: DMatrix::from_fn(p, 2, |i, k| beta[i][k]),
            sigma: vec![DMatrix::identity(2, 2); p],
            df_resid: design.residual_df(),
            n_draws: 2,
        };
        let moderation = ModerationFit {
            d0: 4.0,
            s0_sq: 1.0,
            s_sq: s_tilde.to_vec(),
            s_tilde_sq: s_tilde.to_vec(),
            df_total,
        };
        (pooled, moderation)
    }

    #[test]
    fn t_examples() {
        let d = Design::balanced(&[5, 5]).unwrap();
        let c = Contrast::new(0, 1, 2).unwrap();
        let (pooled, moderation) = fixture(&[[3.0, 2.0], [1.0, 1.0]], &[1.0, 1.0], &d, 12.0);
        let (logfc, t, df) = moderated_t(&pooled, &moderation, &d, c, false).unwrap();
        assert_eq!(logfc, vec![1.0, 0.0]);
        assert!((t[0] - 1.0 / 0.4f64.sqrt()).abs() < 1e-12);
        assert!((t[0] - 1.5811).abs() < 1e-4);
        assert_eq!(t[1], 0.0);
        assert_eq!(pvalue(t[1], df).unwrap(), 1.0);
    }

    #[test]
    fn literal_form_divides_by_variance() {
        let d = Design::balanced(&[5, 5]).unwrap();
        let c = Contrast::new(0, 1, 2).unwrap();
        let (pooled, moderation) = fixture(&[[3.0, 2.0]], &[4.0], &d, 12.0);
        let (_, standard, _) = moderated_t(&pooled, &moderation, &d, c, false).unwrap();
        let (_, literal, _) = moderated_t(&pooled, &moderation, &d, c, true).unwrap();
        assert!((standard[0] - 1.0 / (2.0 * 0.4f64.sqrt())).abs() < 1e-12);
        assert!((literal[0] - 1.0 / (4.0 * 0.4f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_gives_infinite_t() {
        let d = Design::balanced(&[2, 2]).unwrap();
        let c = Contrast::new(0, 1, 2).unwrap();
        let (pooled, moderation) = fixture(&[[1.0, 0.0], [0.0, 1.0]], &[0.0, 0.0], &d, 2.0);
        let (_, t, df) = moderated_t(&pooled, &moderation, &d, c, false).unwrap();
        assert_eq!(t, vec![f64::INFINITY, f64::NEG_INFINITY]);
        assert_eq!(pvalue(t[0], df).unwrap(), 0.0);
    }

    #[test]
    fn doubling_group_sizes_scales_t() {
        let small = Design::balanced(&[3, 3]).unwrap();
        let large = Design::balanced(&[6, 6]).unwrap();
        let c = Contrast::new(0, 1, 2).unwrap();
        let (pooled, moderation) = fixture(&[[2.5, 1.0]], &[0.8], &small, 10.0);
        let (_, t_small, _) = moderated_t(&pooled, &moderation, &small, c, false).unwrap();
        let (_, t_large, _) = moderated_t(&pooled, &moderation, &large, c, false).unwrap();
        assert!((t_large[0] / t_small[0] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(pvalue(0.0, 5.0).unwrap(), 1.0);
        assert_eq!(pvalue(f64::NEG_INFINITY, 5.0).unwrap(), 0.0);
        assert!((pvalue(2.306, 8.0).unwrap() - 0.05).abs() < 1e-3);
        let dist = StudentsT::new(0.0, 1.0, 8.0).unwrap();
        assert!((pvalue(2.306, 8.0).unwrap() - 2.0 * (1.0 - dist.cdf(2.306))).abs() < 1e-12);
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_adjust(&[0.01, 0.02, 0.03]).unwrap(), vec![0.03, 0.03, 0.03]);
        assert_eq!(bh_adjust(&[0.2]).unwrap(), vec![0.2]);
        assert!(bh_adjust(&[0.1, 1.2]).is_err());
        assert!(bh_adjust(&[f64::NAN]).is_err());
        assert!(bh_adjust(&[]).unwrap().is_empty());
    }

    fn bh_brute_force(p: &[f64]) -> Vec<f64> {
        let m = p.len();
        let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut best = f64::INFINITY;
            for j in i..m {
                let scaled = if j + 1 == m { sorted[j].0 } else { m as f64 * sorted[j].0 / (j + 1) as f64 };
                best = best.min(scaled);
            }
            out[sorted[i].1] = best.min(1.0);
        }
        out
    }

    #[test]
    fn bh_matches_brute_force() {
        let mut rng = rng::stream(12, &[]);
        for _ in 0..200 {
            let m = rng.random_range(1..60);
            let p: Vec<f64> = (0..m)
                .map(|_| if rng.random_bool(0.2) { 0.05 } else { rng.random::<f64>() })
                .collect();
            assert_eq!(bh_adjust(&p).unwrap(), bh_brute_force(&p));
        }
    }

    #[test]
    fn decision_rule_is_closed() {
        assert_eq!(decide(&[0.0, 1.0, 0.01, 0.0100001], 0.01), vec![true, false, true, false]);
    }

    proptest! {
        #[test]
        fn bh_monotone_and_bounded(p in prop::collection::vec(0.0f64..=1.0, 1..80)) {
            let q = bh_adjust(&p).unwrap();
            for i in 0..p.len() {
                prop_assert!(q[i] >= p[i] && q[i] <= 1.0);
                for j in 0..p.len() {
                    if p[i] <= p[j] {
                        prop_assert!(q[i] <= q[j]);
                    }
                }
            }
        }

        #[test]
        fn decisions_nested(p in prop::collection::vec(0.0f64..=1.0, 1..50), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let q = bh_adjust(&p).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let small = decide(&q, lo);
            let large = decide(&q, hi);
            prop_assert!(small.iter().zip(&large).all(|(s, l)| !*s || *l));
        }
    }

    /// Kolmogorov distance between the null t statistics of complete Sim-1
    /// data and the Student distribution they are referred to.
    #[test]
    fn null_t_is_student() {
        let mut t_null = Vec::new();
        let mut df = 0.0;
        for rep in 0..20 {
            let (m, d, truth): (IntensityMatrix, Design, _) = gen_sim1(100 + rep).unwrap();
            let stack = ImputedStack::new(&m, vec![m.clone(), m.clone()], Method::Knn, 0).unwrap();
            let pooled = pool(&stack, &d).unwrap();
            let moderation = moderate(&pooled, &d).unwrap();
            let c = Contrast::new(0, 1, 2).unwrap();
            let (_, t, dft) = moderated_t(&pooled, &moderation, &d, c, false).unwrap();
            df = dft;
            t_null.extend(t.iter().zip(&truth.de_rows).filter(|(_, de)| !**de).map(|(t, _)| *t));
        }
        assert_eq!(t_null.len(), 190 * 20);
        t_null.sort_by(f64::total_cmp);
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        let n = t_null.len() as f64;
        let ks = t_null
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = dist.cdf(t);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS distance {ks}");
    }

    #[test]
    fn decisions_read_back_per_contrast() {
        let d = Design::balanced(&[2, 2, 2]).unwrap();
        let (pooled, moderation) = fixture(&[[3.0, 0.0], [0.0, 0.0]], &[0.01, 0.01], &d, 20.0);
        let mut pooled = pooled;
        pooled.beta = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        pooled.sigma = vec![DMatrix::identity(3, 3); 2];
        let header = ReportHeader {
            d0: 4.0,
            s0_sq: 1.0,
            n_draws: 2,
            method: "knn".into(),
            seed: 1,
            threshold: 0.05,
        };
        let reports: Vec<TestReport> = Contrast::all_pairs(3)
            .into_iter()
            .map(|c| test_contrast(&pooled, &moderation, &d, c, false, header.clone()).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_reports(&reports, &path).unwrap();
        let back = read_decisions(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (r, b) in reports.iter().zip(&back) {
            assert_eq!(b.contrast_label, r.contrast_label);
            assert_eq!(b.row_ids, r.row_ids);
            assert_eq!(b.decided, r.decided);
        }
    }
}

//! Core data carriers: the intensity matrix with its observation mask, the
//! sample design, and one-vs-one contrasts. Also CSV ingestion and output.
//!
//! The mask is the only source of truth for missingness. Unobserved cells
//! hold `NaN` in `values` so that any accidental arithmetic on them is
//! visible, but no code path in this crate reads them.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Token used for missing cells in CSV files.
pub const MISSING_TOKEN: &str = "NA";

/// P x N matrix of log2 intensities with an explicit observation mask.
#[derive(Debug, Clone)]
pub struct IntensityMatrix {
    row_ids: Vec<String>,
    protein_ids: Option<Vec<String>>,
    col_ids: Vec<String>,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

/// Equality ignores whatever is stored in unobserved cells.
impl PartialEq for IntensityMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.row_ids == other.row_ids
            && self.protein_ids == other.protein_ids
            && self.col_ids == other.col_ids
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &obs)| !obs || a == b)
    }
}

fn check_unique(ids: &[String], kind: &'static str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId {
                kind,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

impl IntensityMatrix {
    pub fn new(
        row_ids: Vec<String>,
        protein_ids: Option<Vec<String>>,
        col_ids: Vec<String>,
        mut values: DMatrix<f64>,
        mask: DMatrix<bool>,
    ) -> Result<Self> {
        let (p, n) = values.shape();
        if mask.shape() != (p, n) {
            return Err(Error::InvalidMatrix(format!(
                "values are {}x{} but mask is {}x{}",
                p,
                n,
                mask.nrows(),
                mask.ncols()
            )));
        }
        if row_ids.len() != p {
            return Err(Error::InvalidMatrix(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                p
            )));
        }
        if col_ids.len() != n {
            return Err(Error::InvalidMatrix(format!(
                "{} column ids for {} columns",
                col_ids.len(),
                n
            )));
        }
        if let Some(prot) = &protein_ids {
            if prot.len() != p {
                return Err(Error::InvalidMatrix(format!(
                    "{} protein ids for {} rows",
                    prot.len(),
                    p
                )));
            }
        }
        check_unique(&row_ids, "row")?;
        check_unique(&col_ids, "column")?;
        for j in 0..n {
            for i in 0..p {
                if mask[(i, j)] {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::Parse {
                            row: row_ids[i].clone(),
                            column: col_ids[j].clone(),
                            message: format!("observed value {} is not finite", values[(i, j)]),
                        });
                    }
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(Self {
            row_ids,
            protein_ids,
            col_ids,
            values,
            mask,
        })
    }

    /// Fully observed matrix.
    pub fn complete(row_ids: Vec<String>, col_ids: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(row_ids, None, col_ids, values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn protein_ids(&self) -> Option<&[String]> {
        self.protein_ids.as_deref()
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    /// Raw value storage. Unobserved cells hold `NaN`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.values[(i, j)])
    }

    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&o| !o).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.nrows() * self.ncols();
        if total == 0 {
            0.0
        } else {
            self.n_missing() as f64 / total as f64
        }
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&o| o)
    }

    /// Observed `(column, value)` pairs of row `i`.
    pub fn row_observed(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.ncols()).filter_map(move |j| self.get(i, j).map(|v| (j, v)))
    }

    /// Observed values of column `j`.
    pub fn col_observed(&self, j: usize) -> Vec<f64> {
        (0..self.nrows()).filter_map(|i| self.get(i, j)).collect()
    }

    /// Same ids, new contents.
    pub fn with_contents(&self, values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        Self::new(
            self.row_ids.clone(),
            self.protein_ids.clone(),
            self.col_ids.clone(),
            values,
            mask,
        )
    }

    /// Same ids and a full mask.
    pub fn with_complete_values(&self, values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        self.with_contents(values, mask)
    }

    pub fn with_protein_ids(mut self, protein_ids: Vec<String>) -> Result<Self> {
        if protein_ids.len() != self.nrows() {
            return Err(Error::InvalidMatrix(format!(
                "{} protein ids for {} rows",
                protein_ids.len(),
                self.nrows()
            )));
        }
        self.protein_ids = Some(protein_ids);
        Ok(self)
    }

    /// Keep the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let n = self.ncols();
        let values = DMatrix::from_fn(rows.len(), n, |r, j| self.values[(rows[r], j)]);
        let mask = DMatrix::from_fn(rows.len(), n, |r, j| self.mask[(rows[r], j)]);
        Self {
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            protein_ids: self
                .protein_ids
                .as_ref()
                .map(|p| rows.iter().map(|&i| p[i].clone()).collect()),
            col_ids: self.col_ids.clone(),
            values,
            mask,
        }
    }

    /// Keep the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let p = self.nrows();
        Self {
            row_ids: self.row_ids.clone(),
            protein_ids: self.protein_ids.clone(),
            col_ids: cols.iter().map(|&j| self.col_ids[j].clone()).collect(),
            values: DMatrix::from_fn(p, cols.len(), |i, c| self.values[(i, cols[c])]),
            mask: DMatrix::from_fn(p, cols.len(), |i, c| self.mask[(i, cols[c])]),
        }
    }
}

/// Sample-to-condition assignment and the N x I cell-means design matrix.
///
/// Sample order defines the rows of `X`; condition order is first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    samples: Vec<String>,
    conditions: Vec<String>,
    group: Vec<usize>,
    x: DMatrix<f64>,
}

impl Design {
    pub fn new(assignments: Vec<(String, String)>) -> Result<Self> {
        let mut samples = Vec::with_capacity(assignments.len());
        let mut conditions: Vec<String> = Vec::new();
        let mut group = Vec::with_capacity(assignments.len());
        let mut seen = HashSet::new();
        for (sample, condition) in assignments {
            if !seen.insert(sample.clone()) {
                return Err(Error::InvalidDesign(format!("sample `{sample}` listed twice")));
            }
            let k = match conditions.iter().position(|c| *c == condition) {
                Some(k) => k,
                None => {
                    conditions.push(condition);
                    conditions.len() - 1
                }
            };
            samples.push(sample);
            group.push(k);
        }
        if conditions.is_empty() {
            return Err(Error::InvalidDesign("design is empty".into()));
        }
        let mut sizes = vec![0usize; conditions.len()];
        for &k in &group {
            sizes[k] += 1;
        }
        for (k, &size) in sizes.iter().enumerate() {
            if size < 2 {
                return Err(Error::InvalidDesign(format!(
                    "condition `{}` has {} sample(s); at least 2 are required",
                    conditions[k], size
                )));
            }
        }
        let x = DMatrix::from_fn(samples.len(), conditions.len(), |j, k| {
            if group[j] == k {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self {
            samples,
            conditions,
            group,
            x,
        })
    }

    /// Balanced design with `sizes[k]` samples in condition `k`, named
    /// `s1..sN` and `cond1..condI`.
    pub fn balanced(sizes: &[usize]) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut s = 0;
        for (k, &size) in sizes.iter().enumerate() {
            for _ in 0..size {
                s += 1;
                pairs.push((format!("s{s}"), format!("cond{}", k + 1)));
            }
        }
        Self::new(pairs)
    }

    pub fn samples(&self) -> &[String] {
        &self.samples
    }

    pub fn conditions(&self) -> &[String] {
        &self.conditions
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn condition_of(&self, sample: &str) -> Option<&str> {
        self.samples
            .iter()
            .position(|s| s == sample)
            .map(|j| self.conditions[self.group[j]].as_str())
    }

    pub fn condition_index(&self, label: &str) -> Option<usize> {
        self.conditions.iter().position(|c| c == label)
    }

    /// Condition index of each sample, in sample order.
    pub fn groups(&self) -> &[usize] {
        &self.group
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_conditions()];
        for &k in &self.group {
            sizes[k] += 1;
        }
        sizes
    }

    /// Diagonal of XᵀX (the group sizes).
    pub fn xtx_diag(&self) -> Vec<f64> {
        self.group_sizes().into_iter().map(|n| n as f64).collect()
    }

    pub fn xtx_inv_diag(&self) -> Vec<f64> {
        self.group_sizes().into_iter().map(|n| 1.0 / n as f64).collect()
    }

    /// Sample positions belonging to condition `k`.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.group.len()).filter(|&j| self.group[j] == k).collect()
    }

    /// Residual degrees of freedom N - I.
    pub fn residual_df(&self) -> usize {
        self.n_samples() - self.n_conditions()
    }

    /// Reorder samples to match the matrix columns. Condition order is kept.
    pub fn aligned_to(&self, m: &IntensityMatrix) -> Result<Design> {
        if m.ncols() != self.n_samples() {
            return Err(Error::InvalidDesign(format!(
                "matrix has {} samples, design has {}",
                m.ncols(),
                self.n_samples()
            )));
        }
        let index: HashMap<&str, usize> = self
            .samples
            .iter()
            .enumerate()
            .map(|(j, s)| (s.as_str(), j))
            .collect();
        let mut group = Vec::with_capacity(m.ncols());
        for col in m.col_ids() {
            match index.get(col.as_str()) {
                Some(&j) => group.push(self.group[j]),
                None => {
                    return Err(Error::InvalidDesign(format!(
                        "matrix sample `{col}` is not in the design"
                    )))
                }
            }
        }
        let x = DMatrix::from_fn(group.len(), self.n_conditions(), |j, k| {
            if group[j] == k {
                1.0
            } else {
                0.0
            }
        });
        Ok(Design {
            samples: m.col_ids().to_vec(),
            conditions: self.conditions.clone(),
            group,
            x,
        })
    }
}

/// One-vs-one comparison of condition `a` against condition `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Contrast {
    a: usize,
    b: usize,
}

impl Contrast {
    pub fn new(a: usize, b: usize, n_conditions: usize) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidArgument(format!(
                "contrast compares condition {a} with itself"
            )));
        }
        if a >= n_conditions || b >= n_conditions {
            return Err(Error::InvalidArgument(format!(
                "contrast ({a}, {b}) out of range for {n_conditions} conditions"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// All pairs `a < b` in condition order.
    pub fn all_pairs(n_conditions: usize) -> Vec<Contrast> {
        let mut out = Vec::new();
        for a in 0..n_conditions {
            for b in (a + 1)..n_conditions {
                out.push(Contrast { a, b });
            }
        }
        out
    }

    pub fn label(&self, design: &Design) -> String {
        format!("{}-{}", design.conditions()[self.a], design.conditions()[self.b])
    }
}

/// Parse options for [`read_matrix`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Second column carries protein accessions.
    pub protein_column: bool,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>, options: ReadOptions) -> Result<IntensityMatrix> {
    read_matrix_from(open(path.as_ref())?, options)
}

pub fn read_matrix_from<R: Read>(reader: R, options: ReadOptions) -> Result<IntensityMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let skip = if options.protein_column { 2 } else { 1 };
    if header.len() <= skip {
        return Err(Error::InvalidMatrix("header has no sample columns".into()));
    }
    let col_ids: Vec<String> = header.iter().skip(skip).map(|s| s.trim().to_string()).collect();
    check_unique(&col_ids, "column")?;
    let n = col_ids.len();

    let mut row_ids = Vec::new();
    let mut protein_ids = Vec::new();
    let mut data = Vec::new();
    let mut observed = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row_id = record.get(0).unwrap_or("").trim().to_string();
        if record.len() != n + skip {
            return Err(Error::Parse {
                row: if row_id.is_empty() { format!("#{}", line + 1) } else { row_id },
                column: "-".into(),
                message: format!("expected {} fields, found {}", n + skip, record.len()),
            });
        }
        if options.protein_column {
            protein_ids.push(record[1].trim().to_string());
        }
        for (j, cell) in record.iter().skip(skip).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell == MISSING_TOKEN {
                data.push(f64::NAN);
                observed.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: row_id.clone(),
                    column: col_ids[j].clone(),
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: row_id.clone(),
                        column: col_ids[j].clone(),
                        message: format!("`{cell}` is not finite"),
                    });
                }
                data.push(v);
                observed.push(true);
            }
        }
        row_ids.push(row_id);
    }
    let p = row_ids.len();
    let values = DMatrix::from_row_slice(p, n, &data);
    let mask = DMatrix::from_row_slice(p, n, &observed);
    IntensityMatrix::new(
        row_ids,
        options.protein_column.then_some(protein_ids),
        col_ids,
        values,
        mask,
    )
}

/// Format with 17 significant digits, `%.17g` style.
pub fn fmt_g17(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "Inf".into()
        } else {
            "-Inf".into()
        };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_fraction(&fixed).to_string()
    } else {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_matrix(m: &IntensityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_matrix_to(m, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_matrix_to<W: Write>(m: &IntensityMatrix, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["row_id".to_string()];
    if m.protein_ids().is_some() {
        header.push("protein_id".into());
    }
    header.extend(m.col_ids().iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut rec = vec![m.row_ids()[i].clone()];
        if let Some(prot) = m.protein_ids() {
            rec.push(prot[i].clone());
        }
        for j in 0..m.ncols() {
            rec.push(match m.get(i, j) {
                Some(v) => fmt_g17(v),
                None => MISSING_TOKEN.to_string(),
            });
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn read_design(path: impl AsRef<Path>) -> Result<Design> {
    read_design_from(open(path.as_ref())?)
}

/// Two-column `sample,condition` CSV with a header row.
pub fn read_design_from<R: Read>(reader: R) -> Result<Design> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut pairs = Vec::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::InvalidDesign(format!(
                "expected 2 fields per line, found {}",
                record.len()
            )));
        }
        pairs.push((record[0].trim().to_string(), record[1].trim().to_string()));
    }
    Design::new(pairs)
}

pub fn write_design(d: &Design, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["sample", "condition"])?;
    for (j, s) in d.samples().iter().enumerate() {
        wtr.write_record([s.as_str(), d.conditions()[d.groups()[j]].as_str()])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_na_as_missing() {
        let csv = "row_id,a,b\nr1,1.5,NA\nr2,2,3\n";
        let m = read_matrix_from(csv.as_bytes(), ReadOptions::default()).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.n_missing(), 1);
        assert!(!m.is_observed(0, 1));
        assert_eq!(m.get(1, 1), Some(3.0));
    }

    #[test]
    fn empty_cell_is_missing() {
        let csv = "row_id,a,b\nr1,,4\n";
        let m = read_matrix_from(csv.as_bytes(), ReadOptions::default()).unwrap();
        assert_eq!(m.get(0, 0), None);
    }

    #[test]
    fn duplicate_column_rejected() {
        let csv = "row_id,a,a\nr1,1,2\n";
        let err = read_matrix_from(csv.as_bytes(), ReadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate column id"), "{err}");
    }

    #[test]
    fn duplicate_row_rejected() {
        let csv = "row_id,a,b\nr1,1,2\nr1,3,4\n";
        let err = read_matrix_from(csv.as_bytes(), ReadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate row id"), "{err}");
    }

    #[test]
    fn ragged_row_names_row() {
        let csv = "row_id,a,b\nr1,1,2\nr2,3\n";
        let err = read_matrix_from(csv.as_bytes(), ReadOptions::default()).unwrap_err();
        assert!(err.to_string().contains("r2"), "{err}");
    }

    #[test]
    fn non_numeric_names_cell() {
        let csv = "row_id,a,b\nr1,1,x\n";
        let err = read_matrix_from(csv.as_bytes(), ReadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("r1") && msg.contains("column b"), "{msg}");
    }

    #[test]
    fn protein_column() {
        let csv = "row_id,protein_id,a,b\np1,P1,1,2\np2,P1;P2,3,NA\n";
        let opts = ReadOptions { protein_column: true };
        let m = read_matrix_from(csv.as_bytes(), opts).unwrap();
        assert_eq!(m.protein_ids().unwrap(), &["P1".to_string(), "P1;P2".to_string()]);
        assert_eq!(m.ncols(), 2);
    }

    #[test]
    fn complete_matrix_writes_no_na() {
        let m = IntensityMatrix::complete(
            vec!["r1".into(), "r2".into()],
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix_to(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("NA"));
    }

    #[test]
    fn single_missing_cell_writes_na() {
        let m = IntensityMatrix::new(
            vec!["r1".into()],
            None,
            vec!["a".into()],
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, false),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix_to(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row_id,a\nr1,NA\n");
    }

    #[test]
    fn unobserved_cells_hold_nan() {
        let m = IntensityMatrix::new(
            vec!["r1".into()],
            None,
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(1, 2, &[5.0, 6.0]),
            DMatrix::from_row_slice(1, 2, &[true, false]),
        )
        .unwrap();
        assert!(m.values()[(0, 1)].is_nan());
        assert_eq!(m.get(0, 1), None);
    }

    #[test]
    fn g17_formatting() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1e-7), "9.9999999999999995e-08");
        assert_eq!(fmt_g17(1e20), "1e+20");
        for x in [std::f64::consts::PI, 1.0 / 3.0, 123456.789, -4.2e-6, 9.999999999999999e16] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn design_six_samples_two_conditions() {
        let d = Design::balanced(&[3, 3]).unwrap();
        assert_eq!(d.x().shape(), (6, 2));
        let xtx = d.x().transpose() * d.x();
        assert_eq!(xtx, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn design_sim1_layout() {
        let d = Design::balanced(&[5, 5]).unwrap();
        let xtx = d.x().transpose() * d.x();
        assert_eq!(xtx, DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 5.0]));
    }

    #[test]
    fn design_rejects_singleton_condition() {
        let csv = "sample,condition\na,X\nb,X\nc,Y\n";
        assert!(matches!(read_design_from(csv.as_bytes()), Err(Error::InvalidDesign(_))));
    }

    #[test]
    fn design_rejects_repeated_sample() {
        let csv = "sample,condition\na,X\na,Y\nb,X\nc,Y\n";
        let err = read_design_from(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("listed twice"));
    }

    #[test]
    fn condition_order_is_first_appearance() {
        let csv = "sample,condition\na,Z\nb,A\nc,Z\nd,A\n";
        let d = read_design_from(csv.as_bytes()).unwrap();
        assert_eq!(d.conditions(), &["Z".to_string(), "A".to_string()]);
        assert_eq!(d.groups(), &[0, 1, 0, 1]);
        assert_eq!(d.condition_of("b"), Some("A"));
    }

    #[test]
    fn align_reorders_samples() {
        let d = Design::new(vec![
            ("a".into(), "X".into()),
            ("b".into(), "Y".into()),
            ("c".into(), "X".into()),
            ("d".into(), "Y".into()),
        ])
        .unwrap();
        let m = IntensityMatrix::complete(
            vec!["r".into()],
            vec!["d".into(), "c".into(), "b".into(), "a".into()],
            DMatrix::zeros(1, 4),
        )
        .unwrap();
        let aligned = d.aligned_to(&m).unwrap();
        assert_eq!(aligned.groups(), &[1, 0, 1, 0]);
        assert_eq!(aligned.conditions(), d.conditions());

        let bad = IntensityMatrix::complete(
            vec!["r".into()],
            vec!["a".into(), "b".into(), "c".into(), "zz".into()],
            DMatrix::zeros(1, 4),
        )
        .unwrap();
        assert!(d.aligned_to(&bad).is_err());
    }

    #[test]
    fn contrast_validation() {
        assert!(Contrast::new(0, 0, 2).is_err());
        assert!(Contrast::new(0, 2, 2).is_err());
        assert!(Contrast::new(1, 0, 2).is_ok());
        assert_eq!(Contrast::all_pairs(3).len(), 3);
    }
}

//! Simulated benchmark designs and MCAR amputation.
//!
//! Every design draws row `i` from its own stream keyed by
//! `(seed, SIMULATE, design_id, i)`, so row generation can run in parallel
//! and still be bit-identical to a sequential run.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::datamodel::{Design, IntensityMatrix};
use crate::error::{Error, Result};
use crate::rng::{self, stage, Stream};

/// Ground-truth differential labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimTruth {
    pub de_rows: Vec<bool>,
}

impl SimTruth {
    pub fn n_de(&self) -> usize {
        self.de_rows.iter().filter(|&&d| d).count()
    }
}

/// A simulation design together with its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimSpec {
    design_id: u8,
    seed: u64,
}

impl SimSpec {
    pub fn new(design_id: u8, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&design_id) {
            return Err(Error::InvalidArgument(format!(
                "unknown simulation design {design_id}; expected 1, 2 or 3"
            )));
        }
        Ok(Self { design_id, seed })
    }

    pub fn design_id(&self) -> u8 {
        self.design_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// (rows, samples per group, DE rows)
    pub fn dimensions(&self) -> (usize, usize, usize) {
        match self.design_id {
            1 => (SIM1_ROWS, SIM1_GROUP, SIM1_DE),
            _ => (SIM23_ROWS, SIM23_GROUP, SIM23_DE),
        }
    }

    pub fn generate(&self) -> Result<(IntensityMatrix, Design, SimTruth)> {
        match self.design_id {
            1 => gen_sim1(self.seed),
            2 => gen_sim2(self.seed),
            _ => gen_sim3(self.seed),
        }
    }
}

const SIM1_ROWS: usize = 200;
const SIM1_GROUP: usize = 5;
const SIM1_DE: usize = 10;
const SIM1_BASE: f64 = 100.0;
const SIM1_SHIFTED: f64 = 200.0;
const SIM1_SD: f64 = 1.0;

const SIM23_ROWS: usize = 1000;
const SIM23_GROUP: usize = 10;
const SIM23_DE: usize = 200;
const PEPTIDE_MEAN: f64 = 1.5;
const PEPTIDE_SD: f64 = 0.5;
const GROUP_EFFECT_MEAN: f64 = 1.5;
const GROUP_EFFECT_SD: f64 = 0.5;
const NOISE_SD: f64 = 0.5;

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("valid normal parameters")
}

fn assemble(
    rows: Vec<Vec<f64>>,
    group_size: usize,
    n_de: usize,
) -> Result<(IntensityMatrix, Design, SimTruth)> {
    let p = rows.len();
    let n = 2 * group_size;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let design = Design::balanced(&[group_size, group_size])?;
    let m = IntensityMatrix::complete(
        (1..=p).map(|i| format!("row{i}")).collect(),
        design.samples().to_vec(),
        DMatrix::from_row_slice(p, n, &flat),
    )?;
    let truth = SimTruth {
        de_rows: (0..p).map(|i| i < n_de).collect(),
    };
    Ok((m, design, truth))
}

fn generate_rows<F>(seed: u64, design_id: u64, p: usize, row: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, &mut Stream) -> Vec<f64> + Sync,
{
    (0..p)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, &[stage::SIMULATE, design_id, i as u64]);
            row(i, &mut rng)
        })
        .collect()
}

/// Fixed-effect one-way design: 200 x 10, two groups of 5, rows 1-10
/// shifted from mean 100 to mean 200 in the second group, unit noise.
pub fn gen_sim1(seed: u64) -> Result<(IntensityMatrix, Design, SimTruth)> {
    let rows = generate_rows(seed, 1, SIM1_ROWS, |i, rng| {
        let first = normal(SIM1_BASE, SIM1_SD);
        let second = if i < SIM1_DE {
            normal(SIM1_SHIFTED, SIM1_SD)
        } else {
            first
        };
        let mut v: Vec<f64> = (0..SIM1_GROUP).map(|_| first.sample(rng)).collect();
        v.extend((0..SIM1_GROUP).map(|_| second.sample(rng)));
        v
    });
    assemble(rows, SIM1_GROUP, SIM1_DE)
}

/// Hierarchical design with a per-row peptide effect and a per-row group
/// effect shared by all replicates of that row: 1000 x 20, two groups of 10,
/// rows 1-200 differential.
pub fn gen_sim2(seed: u64) -> Result<(IntensityMatrix, Design, SimTruth)> {
    let rows = generate_rows(seed, 2, SIM23_ROWS, |i, rng| {
        let peptide = normal(PEPTIDE_MEAN, PEPTIDE_SD).sample(rng);
        let effect = if i < SIM23_DE {
            normal(GROUP_EFFECT_MEAN, GROUP_EFFECT_SD).sample(rng)
        } else {
            0.0
        };
        let noise = normal(0.0, NOISE_SD);
        let mut v: Vec<f64> = (0..SIM23_GROUP).map(|_| peptide + noise.sample(rng)).collect();
        v.extend((0..SIM23_GROUP).map(|_| peptide + effect + noise.sample(rng)));
        v
    });
    assemble(rows, SIM23_GROUP, SIM23_DE)
}

/// Random-effect variant of design 2: the peptide effect, the group effect
/// (differential rows only) and the noise are redrawn for every cell.
pub fn gen_sim3(seed: u64) -> Result<(IntensityMatrix, Design, SimTruth)> {
    let rows = generate_rows(seed, 3, SIM23_ROWS, |i, rng| {
        let peptide = normal(PEPTIDE_MEAN, PEPTIDE_SD);
        let effect = normal(GROUP_EFFECT_MEAN, GROUP_EFFECT_SD);
        let noise = normal(0.0, NOISE_SD);
        let mut v: Vec<f64> = (0..SIM23_GROUP)
            .map(|_| peptide.sample(rng) + noise.sample(rng))
            .collect();
        v.extend((0..SIM23_GROUP).map(|_| {
            let g = if i < SIM23_DE { effect.sample(rng) } else { 0.0 };
            peptide.sample(rng) + g + noise.sample(rng)
        }));
        v
    });
    assemble(rows, SIM23_GROUP, SIM23_DE)
}

const AMPUTE_MAX_ROUNDS: usize = 1000;

/// Mask exactly `round(proportion * P * N)` currently observed cells,
/// chosen uniformly without replacement, never emptying a row.
pub fn ampute_mcar(m: &IntensityMatrix, proportion: f64, seed: u64) -> Result<IntensityMatrix> {
    ampute_cells(m, None, proportion, seed)
}

/// As [`ampute_mcar`], but never empties a row within any condition.
/// `design` must be aligned to the matrix columns.
pub fn ampute_mcar_grouped(
    m: &IntensityMatrix,
    design: &Design,
    proportion: f64,
    seed: u64,
) -> Result<IntensityMatrix> {
    if design.n_samples() != m.ncols() {
        return Err(Error::InvalidDesign(format!(
            "design has {} samples, matrix has {} columns",
            design.n_samples(),
            m.ncols()
        )));
    }
    ampute_cells(m, Some(design.groups()), proportion, seed)
}

fn ampute_cells(
    m: &IntensityMatrix,
    groups: Option<&[usize]>,
    proportion: f64,
    seed: u64,
) -> Result<IntensityMatrix> {
    if !(0.0..1.0).contains(&proportion) {
        return Err(Error::InvalidArgument(format!(
            "missing proportion {proportion} outside [0, 1)"
        )));
    }
    let (p, n) = (m.nrows(), m.ncols());
    let target = (proportion * (p * n) as f64).round() as usize;
    if target == 0 {
        return Ok(m.clone());
    }
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for j in 0..n {
        for i in 0..p {
            if m.is_observed(i, j) {
                cells.push((i, j));
            }
        }
    }
    if target > cells.len() {
        return Err(Error::Amputation(format!(
            "{target} cells requested but only {} are observed",
            cells.len()
        )));
    }
    let n_units = groups.map_or(1, |g| g.iter().copied().max().unwrap_or(0) + 1);
    let unit = |(i, j): (usize, usize)| i * n_units + groups.map_or(0, |g| g[j]);
    let mut observed = vec![0usize; p * n_units];
    for &c in &cells {
        observed[unit(c)] += 1;
    }

    let mut rng = rng::stream(seed, &[stage::AMPUTE]);
    for k in 0..target {
        let r = rng.random_range(k..cells.len());
        cells.swap(k, r);
    }

    for _ in 0..AMPUTE_MAX_ROUNDS {
        let mut removed = vec![0usize; p * n_units];
        for &c in &cells[..target] {
            removed[unit(c)] += 1;
        }
        let offending: Vec<usize> = (0..observed.len())
            .filter(|&u| observed[u] > 0 && removed[u] == observed[u])
            .collect();
        if offending.is_empty() {
            let mut mask = m.mask().clone();
            for &(i, j) in &cells[..target] {
                mask[(i, j)] = false;
            }
            return m.with_contents(m.values().clone(), mask);
        }
        if target == cells.len() {
            break;
        }
        for u in offending {
            let chosen: Vec<usize> = (0..target).filter(|&k| unit(cells[k]) == u).collect();
            if chosen.is_empty() {
                continue;
            }
            let k = chosen[rng.random_range(0..chosen.len())];
            let r = rng.random_range(target..cells.len());
            cells.swap(k, r);
        }
    }
    Err(Error::Amputation(format!(
        "could not mask {target} cells without emptying a row after {AMPUTE_MAX_ROUNDS} redraws"
    )))
}

/// Write `row_id,de` labels.
pub fn write_truth(truth: &SimTruth, row_ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if row_ids.len() != truth.de_rows.len() {
        return Err(Error::Shape(format!(
            "{} row ids for {} truth labels",
            row_ids.len(),
            truth.de_rows.len()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
    wtr.write_record(["row_id", "de"])?;
    for (id, de) in row_ids.iter().zip(&truth.de_rows) {
        wtr.write_record([id.as_str(), if *de { "true" } else { "false" }])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Read labels written by [`write_truth`].
pub fn read_truth(path: impl AsRef<Path>) -> Result<(Vec<String>, SimTruth)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(std::io::BufReader::new(file));
    let mut ids = Vec::new();
    let mut de_rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let id = record.get(0).unwrap_or("").trim().to_string();
        let label = record.get(1).unwrap_or("").trim();
        let de = match label.to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            _ => {
                return Err(Error::Parse {
                    row: id,
                    column: "de".into(),
                    message: format!("`{label}` is not a boolean"),
                })
            }
        };
        ids.push(id);
        de_rows.push(de);
    }
    Ok((ids, SimTruth { de_rows }))
}

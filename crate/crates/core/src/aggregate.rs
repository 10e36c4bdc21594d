//! Peptide to protein roll-up of imputed stacks.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::datamodel::IntensityMatrix;
use crate::error::{Error, Result};
use crate::impute::ImputedStack;

/// Separator between accessions of a peptide shared by several proteins.
pub const PROTEIN_SEPARATOR: char = ';';

fn n_proteins(accession: &str) -> usize {
    accession
        .split(PROTEIN_SEPARATOR)
        .filter(|a| !a.trim().is_empty())
        .count()
}

fn protein_ids(m: &IntensityMatrix) -> Result<&[String]> {
    m.protein_ids()
        .ok_or_else(|| Error::InvalidMatrix("protein ids are required for aggregation".into()))
}

/// Keep the rows whose protein id names exactly one protein.
pub fn filter_unique(m: &IntensityMatrix) -> Result<IntensityMatrix> {
    let ids = protein_ids(m)?;
    let keep: Vec<usize> = (0..m.nrows()).filter(|&i| n_proteins(&ids[i]) == 1).collect();
    log::info!("kept {} of {} peptides mapping to a single protein", keep.len(), m.nrows());
    Ok(m.select_rows(&keep))
}

/// Proteins in order of first appearance with the rows of each.
fn group_rows(ids: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let key = id.trim();
        let g = *index.entry(key).or_insert_with(|| {
            groups.push((key.to_string(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    groups
}

/// log2 of a sum of 2^v, shifted by the maximum to avoid overflow.
fn log2_sum_exp2(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = values.clone().fold(f64::NEG_INFINITY, f64::max);
    top + values.map(|v| (v - top).exp2()).sum::<f64>().log2()
}

/// Per draw and protein: log2 of the summed raw-scale peptide intensities.
pub fn aggregate_sum(stack: &ImputedStack) -> Result<ImputedStack> {
    let first = &stack.draws()[0];
    let ids = protein_ids(first)?;
    if let Some(shared) = ids.iter().find(|id| n_proteins(id) != 1) {
        return Err(Error::InvalidMatrix(format!(
            "protein id `{shared}` does not name exactly one protein; filter to unique peptides first"
        )));
    }
    let groups = group_rows(ids);
    let proteins: Vec<String> = groups.iter().map(|(p, _)| p.clone()).collect();
    let draws = stack
        .draws()
        .par_iter()
        .map(|draw| {
            let v = draw.values();
            let values = DMatrix::from_fn(groups.len(), draw.ncols(), |g, j| {
                log2_sum_exp2(groups[g].1.iter().map(|&i| v[(i, j)]))
            });
            IntensityMatrix::complete(proteins.clone(), draw.col_ids().to_vec(), values)?
                .with_protein_ids(proteins.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    ImputedStack::from_complete_draws(draws, stack.method(), stack.seed(), stack.missing_fraction())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::Method;

    fn peptides(proteins: &[&str], values: &[f64], n: usize) -> IntensityMatrix {
        let p = proteins.len();
        IntensityMatrix::complete(
            (0..p).map(|i| format!("pep{i}")).collect(),
            (0..n).map(|j| format!("s{j}")).collect(),
            DMatrix::from_row_slice(p, n, values),
        )
        .unwrap()
        .with_protein_ids(proteins.iter().map(|s| s.to_string()).collect())
        .unwrap()
    }

    fn stack_of(m: IntensityMatrix) -> ImputedStack {
        ImputedStack::from_complete_draws(vec![m.clone(), m], Method::Knn, 1, 0.0).unwrap()
    }

    #[test]
    fn unique_filter() {
        let m = peptides(&["P1", "P1;P2", "P2", "P3;P1;P2", " P4 "], &[1.0; 5], 1);
        let kept = filter_unique(&m).unwrap();
        // rule applied by hand: rows 0, 2 and 4 name one protein
        assert_eq!(kept.row_ids(), ["pep0", "pep2", "pep4"]);
        let no_proteins = IntensityMatrix::complete(vec!["a".into()], vec!["s".into()], DMatrix::zeros(1, 1)).unwrap();
        assert!(filter_unique(&no_proteins).is_err());
    }

    #[test]
    fn sum_of_equal_peptides() {
        let m = peptides(&["P1", "P1", "P2"], &[3.0, 1.0, 3.0, 2.0, 5.5, -1.0], 2);
        let out = aggregate_sum(&stack_of(m)).unwrap();
        let draw = &out.draws()[0];
        assert_eq!(draw.row_ids(), ["P1", "P2"]);
        assert_eq!(draw.values()[(0, 0)], 4.0);
        assert!((draw.values()[(0, 1)] - (2f64 + 4.0).log2()).abs() < 1e-14);
        // single peptide passes through
        assert_eq!(draw.values()[(1, 0)], 5.5);
        assert_eq!(draw.values()[(1, 1)], -1.0);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn commutes_with_column_permutation() {
        let m = peptides(&["A", "B", "A", "B"], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0], 3);
        let perm = [2, 0, 1];
        let permuted = m.select_cols(&perm);
        let a = aggregate_sum(&stack_of(m)).unwrap();
        let b = aggregate_sum(&stack_of(permuted)).unwrap();
        for (j, &src) in perm.iter().enumerate() {
            for i in 0..2 {
                assert_eq!(b.draws()[0].values()[(i, j)], a.draws()[0].values()[(i, src)]);
            }
        }
    }

    #[test]
    fn protein_value_dominates_peptides() {
        let m = peptides(&["A", "A", "A", "B"], &[30.0, 2.0, 29.5, 8.0, -3.0, 0.0, 12.0, 12.0], 2);
        let out = aggregate_sum(&stack_of(m.clone())).unwrap();
        for j in 0..2 {
            for i in 0..3 {
                assert!(out.draws()[0].values()[(0, j)] >= m.values()[(i, j)]);
            }
        }
    }

    #[test]
    fn shared_peptides_rejected() {
        let m = peptides(&["A", "A;B"], &[1.0, 2.0], 1);
        assert!(aggregate_sum(&stack_of(m)).is_err());
    }
}

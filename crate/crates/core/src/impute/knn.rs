//! k-nearest-neighbour imputation over rows.
//!
//! The distance between two rows is the root mean squared difference over
//! the columns observed in both. A missing cell is filled with the mean of
//! the `k` nearest rows observed in that column; ties in distance go to the
//! lower row index.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::EngineConfig;
use crate::datamodel::{Design, IntensityMatrix};
use crate::error::Result;
use crate::rng::Stream;

pub(crate) fn row_distance(m: &IntensityMatrix, a: usize, b: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for j in 0..m.ncols() {
        if let (Some(x), Some(y)) = (m.get(a, j), m.get(b, j)) {
            sum += (x - y) * (x - y);
            shared += 1;
        }
    }
    (shared > 0).then(|| (sum / shared as f64).sqrt())
}

fn fill_row(m: &IntensityMatrix, i: usize, k: usize) -> Vec<(usize, f64)> {
    let missing: Vec<usize> = (0..m.ncols()).filter(|&j| !m.is_observed(i, j)).collect();
    let mut neighbours: Vec<(f64, usize)> = (0..m.nrows())
        .filter(|&r| r != i)
        .filter_map(|r| row_distance(m, i, r).map(|d| (d, r)))
        .collect();
    neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let row_mean = {
        let obs: Vec<f64> = m.row_observed(i).map(|(_, v)| v).collect();
        obs.iter().sum::<f64>() / obs.len().max(1) as f64
    };
    missing
        .into_iter()
        .map(|j| {
            let picked: Vec<f64> = neighbours
                .iter()
                .filter_map(|&(_, r)| m.get(r, j))
                .take(k)
                .collect();
            let v = if picked.is_empty() {
                row_mean
            } else {
                picked.iter().sum::<f64>() / picked.len() as f64
            };
            (j, v)
        })
        .collect()
}

/// The stream is unused: kNN imputation is deterministic.
pub fn engine_knn(m: &IntensityMatrix, _design: &Design, cfg: &EngineConfig, _rng: &mut Stream) -> Result<DMatrix<f64>> {
    let rows: Vec<usize> = (0..m.nrows())
        .filter(|&i| (0..m.ncols()).any(|j| !m.is_observed(i, j)))
        .collect();
    let fills: Vec<(usize, Vec<(usize, f64)>)> = rows
        .par_iter()
        .map(|&i| (i, fill_row(m, i, cfg.k_neighbors)))
        .collect();
    let mut out = m.values().clone();
    for (i, cells) in fills {
        for (j, v) in cells {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::Method;
    use crate::rng;

    fn matrix(values: &[f64], mask: &[bool], p: usize, n: usize) -> IntensityMatrix {
        IntensityMatrix::new(
            (0..p).map(|i| format!("r{i}")).collect(),
            None,
            (0..n).map(|j| format!("c{j}")).collect(),
            DMatrix::from_row_slice(p, n, values),
            DMatrix::from_row_slice(p, n, mask),
        )
        .unwrap()
    }

    fn run(m: &IntensityMatrix, k: usize) -> DMatrix<f64> {
        let mut cfg = EngineConfig::new(Method::Knn);
        cfg.k_neighbors = k;
        let d = Design::balanced(&[2, 2]).unwrap();
        engine_knn(m, &d, &cfg, &mut rng::stream(0, &[])).unwrap()
    }

    #[test]
    fn nearest_neighbour_copy() {
        let m = matrix(
            &[1.0, 2.0, 0.0, 4.0, 1.0, 2.0, 7.0, 4.0, 9.0, 9.0, 1.0, 9.0],
            &[true, true, false, true, true, true, true, true, true, true, true, true],
            3,
            4,
        );
        assert_eq!(run(&m, 1)[(0, 2)], 7.0);
    }

    #[test]
    fn constant_candidates() {
        let c = 3.25;
        let m = matrix(
            &[1.0, 0.0, 5.0, 6.0, c, c, c, c, c, c, c, c],
            &[true, false, true, true, true, true, true, true, true, true, true, true],
            3,
            4,
        );
        assert_eq!(run(&m, 10)[(0, 1)], c);
    }

    #[test]
    fn falls_back_to_row_mean() {
        // nobody else observes column 3
        let m = matrix(
            &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0, 1.0, 0.0],
            &[true, true, true, false, true, true, true, false],
            2,
            4,
        );
        let out = run(&m, 2);
        assert_eq!(out[(0, 3)], 2.0);
        assert_eq!(out[(1, 3)], 1.0);
    }

    /// Independent oracle: full distance matrix, then per-cell selection by
    /// stable sort on (distance, index).
    fn brute_force(values: &[Vec<Option<f64>>], k: usize) -> Vec<Vec<f64>> {
        let p = values.len();
        let n = values[0].len();
        let mut dist = vec![vec![None; p]; p];
        for a in 0..p {
            for b in 0..p {
                let pairs: Vec<(f64, f64)> = (0..n)
                    .filter_map(|j| Some((values[a][j]?, values[b][j]?)))
                    .collect();
                if !pairs.is_empty() {
                    let ss: f64 = pairs.iter().map(|(x, y)| (x - y).powi(2)).sum();
                    dist[a][b] = Some((ss / pairs.len() as f64).sqrt());
                }
            }
        }
        let mut out = vec![vec![0.0; n]; p];
        for i in 0..p {
            for j in 0..n {
                out[i][j] = match values[i][j] {
                    Some(v) => v,
                    None => {
                        let mut cands: Vec<(f64, usize, f64)> = (0..p)
                            .filter(|&r| r != i)
                            .filter_map(|r| Some((dist[i][r]?, r, values[r][j]?)))
                            .collect();
                        cands.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
                        let take: Vec<f64> = cands.iter().take(k).map(|c| c.2).collect();
                        take.iter().sum::<f64>() / take.len() as f64
                    }
                };
            }
        }
        out
    }

    #[test]
    fn five_row_hand_example_matches_oracle() {
        let raw = [
            [Some(1.0), Some(2.0), None, Some(4.0)],
            [Some(1.5), None, Some(3.5), Some(4.5)],
            [Some(0.5), Some(2.5), Some(2.0), None],
            [Some(3.0), Some(1.0), Some(5.0), Some(2.0)],
            [None, Some(2.2), Some(3.1), Some(3.9)],
        ];
        let values: Vec<f64> = raw.iter().flatten().map(|v| v.unwrap_or(0.0)).collect();
        let mask: Vec<bool> = raw.iter().flatten().map(Option::is_some).collect();
        let m = matrix(&values, &mask, 5, 4);
        let rows: Vec<Vec<Option<f64>>> = raw.iter().map(|r| r.to_vec()).collect();
        for k in 1..=4 {
            let expected = brute_force(&rows, k);
            let got = run(&m, k);
            for i in 0..5 {
                for j in 0..4 {
                    assert!((got[(i, j)] - expected[i][j]).abs() < 1e-12, "k={k} ({i},{j})");
                }
            }
        }
    }
}

//! missForest-style imputation with regression random forests.
//!
//! Missing cells start at their column mean. Columns are visited in
//! ascending order of missingness; each one is regressed on all other
//! columns with a forest grown on the rows where it is observed and its
//! missing cells are replaced by the forest prediction. Passes stop when
//! the normalized change of the imputed cells grows for the first time
//! (the previous pass is returned) or after `max_iter` passes.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::{mean_filled, EngineConfig};
use crate::datamodel::{Design, IntensityMatrix};
use crate::error::Result;
use crate::rng::{self, Stream};

/// Nodes with at most this many samples become leaves.
const MIN_NODE: usize = 5;

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[(row, *feature)] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(x: &DMatrix<f64>, y: &[f64], idx: &mut [usize], features: &[usize]) -> Option<Split> {
    let n = idx.len() as f64;
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let base = total * total / n;
    let mut best: Option<Split> = None;
    for &f in features {
        idx.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
        let mut left = 0.0;
        for k in 0..idx.len() - 1 {
            left += y[idx[k]];
            let (lo, hi) = (x[(idx[k], f)], x[(idx[k + 1], f)]);
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let right = total - left;
            let gain = left * left / nl + right * right / (n - nl) - base;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (lo + hi),
                    gain,
                });
            }
        }
    }
    best.filter(|b| b.gain > 0.0)
}

fn grow(x: &DMatrix<f64>, y: &[f64], mut idx: Vec<usize>, mtry: usize, rng: &mut Stream) -> Tree {
    let n_feat = x.ncols();
    let mut nodes = Vec::new();
    let mut stack = vec![(0usize, std::mem::take(&mut idx))];
    nodes.push(Node::Leaf(0.0));
    let mut features: Vec<usize> = (0..n_feat).collect();
    while let Some((at, mut rows)) = stack.pop() {
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        nodes[at] = Node::Leaf(mean);
        if rows.len() <= MIN_NODE {
            continue;
        }
        for k in 0..mtry {
            let r = rng.random_range(k..n_feat);
            features.swap(k, r);
        }
        let Some(split) = best_split(x, y, &mut rows, &features[..mtry]) else {
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| x[(i, split.feature)] <= split.threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf(0.0));
        let right = nodes.len();
        nodes.push(Node::Leaf(0.0));
        nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        stack.push((right, r));
        stack.push((left, l));
    }
    Tree { nodes }
}

/// Regression forest of bootstrap trees; tree `t` uses the stream keyed by
/// `(forest_seed, t)`.
struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    fn fit(x: &DMatrix<f64>, y: &[f64], n_trees: usize, forest_seed: u64) -> Self {
        let n = y.len();
        let mtry = ((x.ncols() as f64).sqrt().floor() as usize).clamp(1, x.ncols());
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(forest_seed, &[t as u64]);
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow(x, y, sample, mtry, &mut rng)
            })
            .collect();
        Self { trees }
    }

    fn predict(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        self.trees.iter().map(|t| t.predict(x, row)).sum::<f64>() / self.trees.len() as f64
    }
}

fn features_without(x: &DMatrix<f64>, target: usize) -> DMatrix<f64> {
    let cols: Vec<usize> = (0..x.ncols()).filter(|&c| c != target).collect();
    DMatrix::from_fn(x.nrows(), cols.len(), |i, c| x[(i, cols[c])])
}

pub fn engine_rf(m: &IntensityMatrix, _design: &Design, cfg: &EngineConfig, rng: &mut Stream) -> Result<DMatrix<f64>> {
    let (p, n) = (m.nrows(), m.ncols());
    let all: Vec<usize> = (0..n).collect();
    let mut x = mean_filled(m, &all);
    let missing: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..p).filter(|&i| !m.is_observed(i, j)).collect())
        .collect();
    let mut order: Vec<usize> = (0..n).filter(|&j| !missing[j].is_empty()).collect();
    order.sort_by_key(|&j| (missing[j].len(), j));
    if order.is_empty() || n < 2 {
        return Ok(x);
    }

    let mut previous_change = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let before = x.clone();
        for &j in &order {
            let features = features_without(&x, j);
            let rows: Vec<usize> = (0..p).filter(|&i| m.is_observed(i, j)).collect();
            let train = DMatrix::from_fn(rows.len(), features.ncols(), |r, c| features[(rows[r], c)]);
            let y: Vec<f64> = rows.iter().map(|&i| x[(i, j)]).collect();
            let forest = Forest::fit(&train, &y, cfg.rf_trees, rng.random());
            for &i in &missing[j] {
                x[(i, j)] = forest.predict(&features, i);
            }
        }
        let mut change = 0.0;
        let mut scale = 0.0;
        for (j, rows) in missing.iter().enumerate() {
            for &i in rows {
                change += (x[(i, j)] - before[(i, j)]).powi(2);
                scale += x[(i, j)].powi(2);
            }
        }
        let change = change / scale.max(f64::MIN_POSITIVE);
        if change >= previous_change {
            return Ok(before);
        }
        previous_change = change;
        if change < cfg.tol {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::Method;
    use rand_distr::{Distribution, StandardNormal};

    fn small_cfg() -> EngineConfig {
        let mut cfg = EngineConfig::new(Method::Rf);
        cfg.rf_trees = 30;
        cfg.max_iter = 4;
        cfg
    }

    fn duplicated_columns(seed: u64) -> (IntensityMatrix, DMatrix<f64>, Design) {
        let p = 200;
        let mut rng = rng::stream(seed, &[]);
        let mut vals = DMatrix::zeros(p, 4);
        for i in 0..p {
            let x1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let e3: f64 = StandardNormal.sample(&mut rng);
            vals[(i, 0)] = x1;
            vals[(i, 1)] = x1;
            vals[(i, 2)] = x1 + 0.2 * e2;
            vals[(i, 3)] = x1 + 0.2 * e3;
        }
        let mut mask = DMatrix::from_element(p, 4, true);
        for i in (0..p).step_by(10) {
            mask[(i, 1)] = false;
        }
        let d = Design::balanced(&[2, 2]).unwrap();
        let m = IntensityMatrix::new(
            (0..p).map(|i| format!("r{i}")).collect(),
            None,
            d.samples().to_vec(),
            vals.clone(),
            mask,
        )
        .unwrap();
        (m, vals, d)
    }

    #[test]
    fn recovers_duplicated_column() {
        let (m, truth, d) = duplicated_columns(3);
        let out = engine_rf(&m, &d, &small_cfg(), &mut rng::stream(1, &[])).unwrap();
        let held: Vec<usize> = (0..m.nrows()).filter(|&i| !m.is_observed(i, 1)).collect();
        let rmse = (held.iter().map(|&i| (out[(i, 1)] - truth[(i, 1)]).powi(2)).sum::<f64>() / held.len() as f64).sqrt();
        let ys: Vec<f64> = (0..m.nrows()).map(|i| truth[(i, 1)]).collect();
        let mu = ys.iter().sum::<f64>() / ys.len() as f64;
        let sd = (ys.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / (ys.len() - 1) as f64).sqrt();
        assert!(rmse < 0.2 * sd, "rmse {rmse}, sd {sd}");
    }

    #[test]
    fn deterministic_per_stream() {
        let (m, _, d) = duplicated_columns(4);
        let a = engine_rf(&m, &d, &small_cfg(), &mut rng::stream(9, &[1])).unwrap();
        let b = engine_rf(&m, &d, &small_cfg(), &mut rng::stream(9, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_missing_is_unchanged() {
        let (m, truth, d) = duplicated_columns(5);
        let complete = m.with_complete_values(truth).unwrap();
        let out = engine_rf(&complete, &d, &small_cfg(), &mut rng::stream(0, &[])).unwrap();
        assert_eq!(&out, complete.values());
    }

    #[test]
    fn single_tree_fits_step_function() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..40).map(|i| if i < 20 { 1.0 } else { 5.0 }).collect();
        let tree = grow(&x, &y, (0..40).collect(), 1, &mut rng::stream(0, &[]));
        assert_eq!(tree.predict(&x, 3), 1.0);
        assert_eq!(tree.predict(&x, 35), 5.0);
    }
}

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::{CoreError, Result};

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn by_distance(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// The `k` nearest other rows of every row, as `(index, distance)` sorted by
/// distance then index.
pub fn knn(x: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = x.nrows();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, euclidean(x.row(i), x.row(j)))).collect();
            if k < d.len() {
                d.select_nth_unstable_by(k, by_distance);
                d.truncate(k);
            }
            d.sort_by(by_distance);
            d
        })
        .collect()
}

/// Undirected unweighted adjacency lists from a kNN result.
pub fn knn_graph(neighbors: &[Vec<(usize, f64)>]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); neighbors.len()];
    for (i, nb) in neighbors.iter().enumerate() {
        for &(j, _) in nb {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Majority vote among the `k` nearest training rows; ties go to the label
/// with the smallest mean distance, then the smallest label.
pub fn knn_predict(train: &Array2<f64>, labels: &[String], test: &Array2<f64>, k: usize) -> Result<Vec<String>> {
    if train.nrows() == 0 {
        return Err(CoreError::Data("empty training set".into()));
    }
    if labels.len() != train.nrows() {
        return Err(CoreError::Data("one label per training row is required".into()));
    }
    if k == 0 || k > train.nrows() {
        return Err(CoreError::Config(format!("k = {k} with {} training rows", train.nrows())));
    }
    if test.ncols() != train.ncols() {
        return Err(CoreError::Data("train and test widths differ".into()));
    }
    Ok((0..test.nrows())
        .into_par_iter()
        .map(|t| {
            let mut d: Vec<(usize, f64)> = (0..train.nrows()).map(|i| (i, euclidean(test.row(t), train.row(i)))).collect();
            d.sort_by(by_distance);
            let mut votes: std::collections::BTreeMap<&str, (usize, f64)> = Default::default();
            for &(i, dist) in &d[..k] {
                let e = votes.entry(labels[i].as_str()).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += dist;
            }
            let best = votes
                .iter()
                .min_by(|a, b| {
                    let (ca, sa) = *a.1;
                    let (cb, sb) = *b.1;
                    cb.cmp(&ca).then((sa / ca as f64).total_cmp(&(sb / cb as f64))).then(a.0.cmp(b.0))
                })
                .expect("k >= 1");
            best.0.to_string()
        })
        .collect())
}

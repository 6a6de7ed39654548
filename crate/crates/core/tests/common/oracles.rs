//! Brute-force reference implementations shared by the metric, optimizer
//! and acceptance tests.

use std::collections::{BTreeMap, BTreeSet};

use musegnn_core::metrics::euclidean;
use ndarray::Array2;

pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                n += 1.0;
                s += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    s / n
}

pub fn silhouette_oracle(x: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    let d = |i: usize, j: usize| x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            let a = own.iter().map(|&j| d(i, j)).sum::<f64>() / own.len() as f64;
            let others: BTreeSet<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
            let b = others
                .iter()
                .map(|&l| {
                    let m: Vec<usize> = (0..n).filter(|&j| labels[j] == l).collect();
                    m.iter().map(|&j| d(i, j)).sum::<f64>() / m.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            (b - a) / a.max(b)
        })
        .collect()
}

pub fn union_find_connectivity(n: usize, edges: &[(usize, usize)], labels: &[String]) -> f64 {
    let mut total = 0.0;
    let groups: BTreeSet<&String> = labels.iter().collect();
    for l in groups {
        let members: Vec<usize> = (0..n).filter(|&i| &labels[i] == l).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for &(a, b) in edges {
            if &labels[a] == l && &labels[b] == l {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        let mut sizes = BTreeMap::new();
        for &m in &members {
            *sizes.entry(find(&mut parent, m)).or_insert(0usize) += 1;
        }
        let lcc = *sizes.values().max().unwrap();
        total += lcc as f64 / n as f64;
    }
    total
}

pub fn knn_oracle(train: &Array2<f64>, labels: &[String], test: &Array2<f64>, k: usize) -> Vec<String> {
    (0..test.nrows())
        .map(|t| {
            let mut d: Vec<(f64, usize)> = (0..train.nrows()).map(|i| (euclidean(test.row(t), train.row(i)), i)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut tally: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
            for &(dist, i) in &d[..k] {
                tally.entry(&labels[i]).or_default().push(dist);
            }
            let top = tally.values().map(Vec::len).max().unwrap();
            let mut best: Option<(f64, &String)> = None;
            for (l, ds) in &tally {
                if ds.len() == top {
                    let m = ds.iter().sum::<f64>() / ds.len() as f64;
                    if best.is_none_or(|(bm, _)| m < bm) {
                        best = Some((m, l));
                    }
                }
            }
            best.unwrap().1.clone()
        })
        .collect()
}

pub fn adam_oracle(grads: &[f64], lr: f64) -> f64 {
    let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= lr * mh / (vh.sqrt() + 1e-8);
    }
    x
}

/// Direct count of rows whose gene name recurs inside their cluster.
pub fn cgr_oracle(genes: &[&str], clusters: &[usize]) -> f64 {
    let n = genes.len();
    let recurring = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && clusters[j] == clusters[i] && genes[j] == genes[i]))
        .count();
    recurring as f64 / n as f64
}

/// Size-weighted mean over clusters of the mean pairwise neighbor-name
/// Jaccard of each recurring gene; two empty neighborhoods score 1.
pub fn neighbors_overlap_oracle(
    genes: &[&str],
    datasets: &[&str],
    clusters: &[usize],
    neighbors: &BTreeMap<(String, String), BTreeSet<String>>,
) -> f64 {
    let n = genes.len();
    let ids: BTreeSet<usize> = clusters.iter().copied().collect();
    let mut total = 0.0;
    for c in ids {
        let rows: Vec<usize> = (0..n).filter(|&i| clusters[i] == c).collect();
        let names: BTreeSet<&str> = rows.iter().map(|&i| genes[i]).collect();
        let mut scores = Vec::new();
        for name in names {
            let ds: Vec<&str> = rows.iter().filter(|&&i| genes[i] == name).map(|&i| datasets[i]).collect();
            if ds.len() < 2 {
                continue;
            }
            let mut pair = Vec::new();
            for a in 0..ds.len() {
                for b in (a + 1)..ds.len() {
                    let empty = BTreeSet::new();
                    let na = neighbors.get(&(ds[a].to_string(), name.to_string())).unwrap_or(&empty);
                    let nb = neighbors.get(&(ds[b].to_string(), name.to_string())).unwrap_or(&empty);
                    let union = na.union(nb).count();
                    pair.push(if union == 0 { 1.0 } else { na.intersection(nb).count() as f64 / union as f64 });
                }
            }
            scores.push(pair.iter().sum::<f64>() / pair.len() as f64);
        }
        let score = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
        total += rows.len() as f64 * score;
    }
    total / n as f64
}

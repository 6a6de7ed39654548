use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;

use super::knn::{euclidean, knn, knn_graph};
use super::table::EmbeddingTable;
use crate::graph::GeneGraph;

/// Area under the ROC curve by the rank-sum statistic; tied scores count
/// one half. `None` without both classes.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

fn unit_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut r in out.rows_mut() {
        let norm = r.dot(&r).sqrt();
        if norm > 0.0 {
            r /= norm;
        }
    }
    out
}

/// AUC of `sigmoid(cosine)` scores against a 0/1 adjacency over all
/// unordered off-diagonal pairs. Zero rows score as cosine 0.
pub fn dataset_edge_auc(emb: &Array2<f64>, adjacency: &Array2<f64>) -> Option<f64> {
    let u = unit_rows(emb);
    let gram = u.dot(&u.t());
    let p = emb.nrows();
    let mut scores = Vec::with_capacity(p * p.saturating_sub(1) / 2);
    let mut labels = Vec::with_capacity(scores.capacity());
    for i in 0..p {
        for j in (i + 1)..p {
            scores.push(1.0 / (1.0 + (-gram[[i, j]]).exp()));
            labels.push(adjacency[[i, j]] != 0.0);
        }
    }
    auc(&scores, &labels)
}

/// Mean edge AUC over the datasets that have a graph and both edge classes.
pub fn edge_auc(table: &EmbeddingTable, graphs: &[GeneGraph]) -> Option<f64> {
    let mut vals = Vec::new();
    for g in graphs {
        let rows = table.rows_of(&g.meta.dataset_id);
        let by_gene: HashMap<&str, usize> = rows.iter().map(|&r| (table.keys[r].gene.as_str(), r)).collect();
        let idx: Option<Vec<usize>> = g.genes.iter().map(|n| by_gene.get(n.as_str()).copied()).collect();
        let Some(idx) = idx else {
            log::warn!("embeddings do not cover every gene of {}", g.meta.dataset_id);
            continue;
        };
        let emb = table.values.select(ndarray::Axis(0), &idx);
        match dataset_edge_auc(&emb, &g.adjacency()) {
            Some(v) => vals.push(v),
            None => log::warn!("edge AUC undefined for {}: no edges or complete graph", g.meta.dataset_id),
        }
    }
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Silhouette width of every row under `labels` (Euclidean). Labels with a
/// single row get `None`.
pub fn silhouette(x: &Array2<f64>, labels: &[usize]) -> Vec<Option<f64>> {
    let n = x.nrows();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    (0..n)
        .map(|i| {
            let own = labels[i];
            if sizes[own] < 2 {
                return None;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += euclidean(x.row(i), x.row(j));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return None;
            }
            let m = a.max(b);
            Some(if m == 0.0 { 0.0 } else { (b - a) / m })
        })
        .collect()
}

fn dataset_labels(table: &EmbeddingTable, rows: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let labels = rows
        .iter()
        .map(|&r| {
            let next = ids.len();
            *ids.entry(table.keys[r].dataset.as_str()).or_insert(next)
        })
        .collect();
    (labels, ids.len())
}

/// Batch mixing as the mean of `1 - |s|` over common-gene rows labeled by
/// dataset; datasets with a single common row are dropped.
pub fn asw_batch(table: &EmbeddingTable) -> Option<f64> {
    let rows = table.common_rows();
    let (labels, _) = dataset_labels(table, &rows);
    let x = table.values.select(ndarray::Axis(0), &rows);
    let s: Vec<f64> = silhouette(&x, &labels).into_iter().flatten().collect();
    (!s.is_empty()).then(|| s.iter().map(|v| 1.0 - v.abs()).sum::<f64>() / s.len() as f64)
}

/// Gaussian weights over neighbor distances calibrated so that their entropy
/// matches `ln(perplexity)`.
pub fn perplexity_weights(dist: &[f64], perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
    let mut p = vec![0.0; dist.len()];
    for _ in 0..100 {
        let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        for (pi, &d) in p.iter_mut().zip(dist) {
            *pi = (-(d - dmin) * beta).exp();
            z += *pi;
        }
        let mean_d: f64 = p.iter().zip(dist).map(|(pi, d)| pi * (d - dmin)).sum::<f64>() / z;
        let h = z.ln() + beta * mean_d;
        for pi in p.iter_mut() {
            *pi /= z;
        }
        let diff = h - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    p
}

/// Simpson index `sum_b P_b^2` of label mass under `weights`.
pub fn simpson(weights: &[f64], labels: &[usize], n_labels: usize) -> f64 {
    let mut mass = vec![0.0; n_labels];
    for (&w, &l) in weights.iter().zip(labels) {
        mass[l] += w;
    }
    mass.iter().map(|m| m * m).sum()
}

/// Normalized integration LISI over common-gene rows: inverse Simpson index
/// of dataset labels in a perplexity-calibrated neighborhood, mapped from
/// `[1, B]` to `[0, 1]`.
pub fn ilisi(table: &EmbeddingTable, perplexity: f64) -> Option<f64> {
    let rows = table.common_rows();
    let (labels, b) = dataset_labels(table, &rows);
    if b < 2 || rows.len() < 2 {
        return None;
    }
    let x = table.values.select(ndarray::Axis(0), &rows);
    let mut perp = perplexity;
    if (rows.len() as f64 - 1.0) < 3.0 * perp {
        perp = ((rows.len() - 1) as f64 / 3.0).max(1.0);
        log::warn!("only {} rows: perplexity reduced to {perp}", rows.len());
    }
    let k = ((3.0 * perp).floor() as usize).max(1);
    let nn = knn(&x, k);
    let total: f64 = nn
        .iter()
        .map(|nb| {
            let d: Vec<f64> = nb.iter().map(|e| e.1).collect();
            let l: Vec<usize> = nb.iter().map(|e| labels[e.0]).collect();
            let w = perplexity_weights(&d, perp);
            (1.0 / simpson(&w, &l, b) - 1.0) / (b - 1) as f64
        })
        .sum();
    Some(total / rows.len() as f64)
}

/// Size of the largest connected component of the subgraph induced by
/// `nodes` in `adj`.
pub fn largest_component(adj: &[Vec<usize>], nodes: &[usize]) -> usize {
    let inside: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut best = 0;
    for &s in nodes {
        if !seen.insert(s) {
            continue;
        }
        let mut stack = vec![s];
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in &adj[v] {
                if inside.contains(&u) && seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        best = best.max(size);
    }
    best
}

/// Per label group, the largest-component fraction of its nodes in `adj`,
/// averaged with group-size weights.
pub fn connectivity(adj: &[Vec<usize>], labels: &[String]) -> f64 {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let n = labels.len() as f64;
    groups.values().map(|g| largest_component(adj, g) as f64 / g.len() as f64 * g.len() as f64 / n).sum()
}

/// Graph connectivity by tissue label: per cluster a kNN graph on its rows,
/// then [`connectivity`]; mean over clusters with at least two rows.
pub fn graph_connectivity(table: &EmbeddingTable, clusters: &[usize], k: usize) -> Option<f64> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &c) in clusters.iter().enumerate() {
        members.entry(c).or_default().push(r);
    }
    let vals: Vec<f64> = members
        .values()
        .filter(|m| m.len() >= 2)
        .map(|m| {
            let x = table.values.select(ndarray::Axis(0), m);
            let adj = knn_graph(&knn(&x, k));
            let labels: Vec<String> = m.iter().map(|&r| table.keys[r].tissue.clone()).collect();
            connectivity(&adj, &labels)
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Size-weighted share of rows whose gene name recurs within their cluster.
pub fn common_gene_ratio(genes: &[&str], clusters: &[usize]) -> f64 {
    let mut counts: HashMap<(usize, &str), usize> = HashMap::new();
    for (&g, &c) in genes.iter().zip(clusters) {
        *counts.entry((c, g)).or_insert(0) += 1;
    }
    if genes.is_empty() {
        return 0.0;
    }
    // sum_c |c| (1 - u_c/|c|) / sum_c |c| reduces to the recurring-row share.
    let recurring = genes.iter().zip(clusters).filter(|(g, c)| counts[&(**c, **g)] >= 2).count();
    recurring as f64 / genes.len() as f64
}

/// Neighbor-name overlap: per cluster, the mean over recurring gene names of
/// the mean pairwise Jaccard of their graph neighborhoods; size-weighted over
/// clusters. Two empty neighborhoods count as identical.
pub fn neighbors_overlap(table: &EmbeddingTable, clusters: &[usize], graphs: &[GeneGraph]) -> f64 {
    let lookup: HashMap<&str, (&GeneGraph, HashMap<&str, usize>)> =
        graphs.iter().map(|g| (g.meta.dataset_id.as_str(), (g, g.gene_lookup()))).collect();
    let neighborhood = |gene: &str, dataset: &str| -> Option<BTreeSet<&str>> {
        let (g, idx) = lookup.get(dataset)?;
        Some(g.neighbor_names(*idx.get(gene)?))
    };
    let mut by_cluster: BTreeMap<usize, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for (r, &c) in clusters.iter().enumerate() {
        let k = &table.keys[r];
        by_cluster.entry(c).or_default().entry(k.gene.as_str()).or_default().push(k.dataset.as_str());
        *sizes.entry(c).or_insert(0) += 1;
    }
    let total: usize = sizes.values().sum();
    if total == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (c, genes) in &by_cluster {
        let mut scores = Vec::new();
        for (gene, datasets) in genes {
            let sets: Vec<BTreeSet<&str>> = datasets.iter().filter_map(|d| neighborhood(gene, d)).collect();
            if sets.len() < 2 {
                continue;
            }
            let mut s = 0.0;
            let mut pairs = 0;
            for a in 0..sets.len() {
                for b in (a + 1)..sets.len() {
                    let union = sets[a].union(&sets[b]).count();
                    s += if union == 0 { 1.0 } else { sets[a].intersection(&sets[b]).count() as f64 / union as f64 };
                    pairs += 1;
                }
            }
            scores.push(s / pairs as f64);
        }
        if !scores.is_empty() {
            acc += sizes[c] as f64 * scores.iter().sum::<f64>() / scores.len() as f64;
        }
    }
    acc / total as f64
}

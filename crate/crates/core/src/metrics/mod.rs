//! Embedding-quality metrics, clustering, rank aggregation and k-NN label
//! transfer.

mod knn;
mod leiden;
mod scores;
mod table;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::GeneGraph;
use crate::{CoreError, Result};

pub use knn::{euclidean, knn, knn_graph, knn_predict};
pub use leiden::{leiden, relabel, WeightedGraph};
pub use scores::{
    asw_batch, auc, common_gene_ratio, connectivity, dataset_edge_auc, edge_auc, graph_connectivity, ilisi,
    largest_component, neighbors_overlap, perplexity_weights, silhouette, simpson,
};
pub use table::{EmbeddingTable, RowKey};

pub const METRIC_NAMES: [&str; 6] = ["ASW", "AUC", "iLISI", "GC", "CGR", "NO"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub k: usize,
    pub resolution: f64,
    pub perplexity: f64,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k: 15,
            resolution: 1.0,
            perplexity: 30.0,
            seed: 0,
        }
    }
}

/// Leiden clusters of the kNN graph of the embedding rows.
pub fn cluster(x: &ndarray::Array2<f64>, k: usize, resolution: f64, seed: u64) -> Vec<usize> {
    if x.nrows() < 2 {
        return vec![0; x.nrows()];
    }
    let adj = knn_graph(&knn(x, k));
    leiden(&WeightedGraph::from_adjacency(&adj), resolution, seed)
}

/// The six metrics in [`METRIC_NAMES`] order. Rows are put in key order
/// first, so the result does not depend on the input row order.
pub fn evaluate(table: &EmbeddingTable, graphs: &[GeneGraph], cfg: &MetricsConfig) -> Result<[f64; 6]> {
    if table.len() < 2 {
        return Err(CoreError::Data("need at least two embedding rows".into()));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.sort_by(|&a, &b| table.keys[a].cmp(&table.keys[b]));
    let table = &table.subset(&order);
    let clusters = cluster(&table.values, cfg.k, cfg.resolution, cfg.seed);
    let missing = |m: &str| CoreError::Data(format!("{m} is undefined for this embedding table"));
    let asw = asw_batch(table).ok_or_else(|| missing("ASW"))?;
    let auc = edge_auc(table, graphs).ok_or_else(|| missing("edge AUC"))?;
    let ilisi = ilisi(table, cfg.perplexity).ok_or_else(|| missing("iLISI"))?;
    let gc = graph_connectivity(table, &clusters, cfg.k).ok_or_else(|| missing("graph connectivity"))?;
    let genes: Vec<&str> = table.keys.iter().map(|k| k.gene.as_str()).collect();
    let cgr = common_gene_ratio(&genes, &clusters);
    let no = neighbors_overlap(table, &clusters, graphs);
    Ok([asw, auc, ilisi, gc, cgr, no])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub values: [f64; 6],
    pub ranks: [f64; 6],
    pub scaled: [f64; 6],
    pub avg_rank: f64,
    pub avg_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Vec<String>,
    pub methods: Vec<MethodReport>,
}

/// Average descending ranks with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Min-max scaling; a constant column maps to 0.5.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

/// Per-method average rank and average min-max score over the six metrics.
pub fn aggregate(methods: &[(String, [f64; 6])]) -> Result<MetricsReport> {
    if methods.len() < 2 {
        return Err(CoreError::Config("aggregation needs at least two methods".into()));
    }
    if methods.iter().any(|m| m.1.iter().any(|v| !v.is_finite())) {
        return Err(CoreError::Data("metric values must be finite".into()));
    }
    let mut ranks = vec![[0.0; 6]; methods.len()];
    let mut scaled = vec![[0.0; 6]; methods.len()];
    for m in 0..6 {
        let col: Vec<f64> = methods.iter().map(|r| r.1[m]).collect();
        for (i, (r, s)) in average_ranks(&col).into_iter().zip(min_max(&col)).enumerate() {
            ranks[i][m] = r;
            scaled[i][m] = s;
        }
    }
    Ok(MetricsReport {
        metrics: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        methods: methods
            .iter()
            .enumerate()
            .map(|(i, (name, values))| MethodReport {
                method: name.clone(),
                values: *values,
                ranks: ranks[i],
                scaled: scaled[i],
                avg_rank: ranks[i].iter().sum::<f64>() / 6.0,
                avg_score: scaled[i].iter().sum::<f64>() / 6.0,
            })
            .collect(),
    })
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.methods.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}", "method");
        for m in &self.metrics {
            write!(out, " {m:>7}").unwrap();
        }
        out.push_str(" avg_rank avg_score\n");
        for r in &self.methods {
            write!(out, "{:<width$}", r.method).unwrap();
            for v in r.values {
                write!(out, " {v:>7.4}").unwrap();
            }
            writeln!(out, " {:>8.4} {:>9.4}", r.avg_rank, r.avg_score).unwrap();
        }
        out
    }

    /// Long-format rows for plotting: method, metric, value, scaled, rank.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("method,metric,value,scaled,rank\n");
        for r in &self.methods {
            for (m, name) in self.metrics.iter().enumerate() {
                writeln!(out, "{},{},{},{},{}", r.method, name, r.values[m], r.scaled[m], r.ranks[m]).unwrap();
            }
            writeln!(out, "{},avg,{},{},{}", r.method, r.avg_score, r.avg_score, r.avg_rank).unwrap();
        }
        out
    }
}

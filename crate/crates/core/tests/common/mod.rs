#![allow(dead_code)]

pub mod oracles;

use musegnn_core::data::{generate_synthetic, DatasetMeta, Modality, SyntheticSpec};
use musegnn_core::graph::{GeneGraph, GraphEdge};
use ndarray::Array2;

pub fn meta(id: &str, modality: Modality) -> DatasetMeta {
    DatasetMeta {
        dataset_id: id.into(),
        tissue: "t".into(),
        modality,
        species: "s".into(),
    }
}

/// Graphs whose edges are the planted module structure and whose node
/// features are standardized log counts.
pub fn planted_graphs(n_datasets: usize, n_genes: usize, module_size: usize, n_cells: usize, seed: u64) -> Vec<GeneGraph> {
    let out = generate_synthetic(&SyntheticSpec {
        n_datasets,
        n_genes,
        n_cells,
        module_size,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    out.datasets
        .iter()
        .map(|d| {
            let nb = out.truth.neighbors(&d.meta.dataset_id).unwrap();
            let genes = d.counts.genes.clone();
            let idx = |n: &str| genes.iter().position(|g| g == n).unwrap();
            let mut edges = Vec::new();
            for (a, set) in &nb {
                for b in set {
                    if a < b {
                        edges.push(GraphEdge { a: idx(a), b: idx(b), rho: 0.5, pval: 1e-6 });
                    }
                }
            }
            let all: Vec<usize> = (0..genes.len()).collect();
            let dense = d.counts.dense_genes(&all);
            let mut feats = Array2::from_shape_fn((genes.len(), dense.nrows()), |(g, c)| dense[[c, g]].ln_1p());
            for mut row in feats.rows_mut() {
                let m = row.mean().unwrap();
                let sd = row.mapv(|x| (x - m) * (x - m)).mean().unwrap().sqrt().max(1e-12);
                row.mapv_inplace(|x| (x - m) / sd);
            }
            GeneGraph::new(d.meta.clone(), genes, d.counts.barcodes.clone(), feats, edges).unwrap()
        })
        .collect()
}

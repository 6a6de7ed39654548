//! Per-dataset gene graphs and cross-graph anchor sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::LabeledMatrix;
use crate::coexpression::{parse_edges_tsv, EDGES_HEADER};
use crate::data::DatasetMeta;
use crate::preprocess::ResidualMatrix;
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub rho: f64,
    pub pval: f64,
}

/// Gene nodes with residual features and undirected co-expression edges.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneGraph {
    pub meta: DatasetMeta,
    pub genes: Vec<String>,
    /// Cell barcodes labelling the feature columns.
    pub barcodes: Vec<String>,
    /// p × n_cells; row g is gene g's residual vector.
    pub features: Array2<f64>,
    /// Edges with `a < b`, sorted.
    pub edges: Vec<GraphEdge>,
    neighbors: Vec<Vec<usize>>,
}

impl GeneGraph {
    pub fn new(
        meta: DatasetMeta,
        genes: Vec<String>,
        barcodes: Vec<String>,
        features: Array2<f64>,
        mut edges: Vec<GraphEdge>,
    ) -> Result<Self> {
        let p = genes.len();
        if features.nrows() != p || features.ncols() != barcodes.len() {
            return Err(CoreError::Data(format!(
                "features {:?} do not match {p} genes x {} barcodes",
                features.dim(),
                barcodes.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for g in &genes {
            if !seen.insert(g.as_str()) {
                return Err(CoreError::Data(format!("duplicate gene {g} in graph")));
            }
        }
        for e in &mut edges {
            if e.a >= p || e.b >= p {
                return Err(CoreError::Data(format!(
                    "edge ({}, {}) out of range for {p} genes",
                    e.a, e.b
                )));
            }
            if e.a == e.b {
                return Err(CoreError::Data(format!("self-loop on gene {}", genes[e.a])));
            }
            if e.a > e.b {
                std::mem::swap(&mut e.a, &mut e.b);
            }
        }
        edges.sort_by_key(|e| (e.a, e.b));
        if edges.windows(2).any(|w| (w[0].a, w[0].b) == (w[1].a, w[1].b)) {
            return Err(CoreError::Data("duplicate edge".into()));
        }
        let mut neighbors = vec![Vec::new(); p];
        for e in &edges {
            neighbors[e.a].push(e.b);
            neighbors[e.b].push(e.a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            meta,
            genes,
            barcodes,
            features,
            edges,
            neighbors,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.genes.len()
    }

    pub fn neighbors(&self, g: usize) -> &[usize] {
        &self.neighbors[g]
    }

    pub fn neighbor_names(&self, g: usize) -> BTreeSet<&str> {
        self.neighbors[g].iter().map(|&h| self.genes[h].as_str()).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Dense symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Array2<f64> {
        let p = self.n_nodes();
        let mut a = Array2::zeros((p, p));
        for e in &self.edges {
            a[[e.a, e.b]] = 1.0;
            a[[e.b, e.a]] = 1.0;
        }
        a
    }

    pub fn gene_lookup(&self) -> HashMap<&str, usize> {
        self.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect()
    }

    /// Induced subgraph on `nodes` (kept in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Result<GeneGraph> {
        let mut pos = vec![usize::MAX; self.n_nodes()];
        for (i, &n) in nodes.iter().enumerate() {
            pos[n] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| pos[e.a] != usize::MAX && pos[e.b] != usize::MAX)
            .map(|e| GraphEdge { a: pos[e.a], b: pos[e.b], ..e.clone() })
            .collect();
        GeneGraph::new(
            self.meta.clone(),
            nodes.iter().map(|&n| self.genes[n].clone()).collect(),
            self.barcodes.clone(),
            self.features.select(ndarray::Axis(0), nodes),
            edges,
        )
    }
}

/// Build a graph over the HVGs. `edges` index positions in `hvgs`.
pub fn assemble_graph(
    residuals: &ResidualMatrix,
    hvgs: &[usize],
    edges: Vec<GraphEdge>,
    meta: DatasetMeta,
) -> Result<GeneGraph> {
    if let Some(&g) = hvgs.iter().find(|&&g| g >= residuals.genes.len()) {
        return Err(CoreError::Data(format!("HVG index {g} out of range")));
    }
    let features = residuals.values.select(ndarray::Axis(1), hvgs).reversed_axes();
    let features = features.as_standard_layout().to_owned();
    GeneGraph::new(
        meta,
        hvgs.iter().map(|&g| residuals.genes[g].clone()).collect(),
        residuals.barcodes.clone(),
        features,
        edges,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    meta: DatasetMeta,
    genes: Vec<String>,
    n_edges: usize,
}

pub const BUNDLE_META: &str = "graph.json";
pub const BUNDLE_EDGES: &str = "edges.tsv";
pub const BUNDLE_FEATURES: &str = "features.bin";

/// Write `graph.json`, `edges.tsv` and `features.bin` under `dir`.
pub fn save_bundle(dir: &Path, g: &GeneGraph) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let header = BundleHeader {
        meta: g.meta.clone(),
        genes: g.genes.clone(),
        n_edges: g.edges.len(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    let p = dir.join(BUNDLE_META);
    fs::write(&p, json + "\n").map_err(|e| CoreError::io(&p, e))?;
    let mut tsv = String::from(EDGES_HEADER);
    tsv.push('\n');
    for e in &g.edges {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", g.genes[e.a], g.genes[e.b], e.rho, e.pval));
    }
    let p = dir.join(BUNDLE_EDGES);
    fs::write(&p, tsv).map_err(|e| CoreError::io(&p, e))?;
    LabeledMatrix {
        values: g.features.clone(),
        names: g.barcodes.clone(),
        row_names: g.genes.clone(),
    }
    .write(&dir.join(BUNDLE_FEATURES))
}

pub fn load_bundle(dir: &Path) -> Result<GeneGraph> {
    let p = dir.join(BUNDLE_META);
    let text = fs::read_to_string(&p).map_err(|e| CoreError::io(&p, e))?;
    let header: BundleHeader =
        serde_json::from_str(&text).map_err(|e| CoreError::parse("graph.json", e.to_string()))?;
    let p = dir.join(BUNDLE_EDGES);
    let text = fs::read_to_string(&p).map_err(|e| CoreError::io(&p, e))?;
    let records = parse_edges_tsv(&text)?;
    if records.len() != header.n_edges {
        return Err(CoreError::Data(format!(
            "{}: {} edges listed, header says {}",
            p.display(),
            records.len(),
            header.n_edges
        )));
    }
    let features = LabeledMatrix::read(&dir.join(BUNDLE_FEATURES))?;
    if features.row_names != header.genes {
        return Err(CoreError::Data("feature rows do not match graph genes".into()));
    }
    let lookup: HashMap<&str, usize> =
        header.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let edges = records
        .iter()
        .map(|r| {
            let idx = |n: &str| {
                lookup
                    .get(n)
                    .copied()
                    .ok_or_else(|| CoreError::Data(format!("edge names unknown gene {n}")))
            };
            Ok(GraphEdge { a: idx(&r.gene_a)?, b: idx(&r.gene_b)?, rho: r.rho, pval: r.pval })
        })
        .collect::<Result<Vec<_>>>()?;
    GeneGraph::new(header.meta, header.genes, features.names, features.values, edges)
}

/// Anchors and difference genes between two graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    /// `(index in i, index in j)` for shared gene names, ordered by name.
    pub common: Vec<(usize, usize)>,
    pub diff_i: Vec<usize>,
    pub diff_j: Vec<usize>,
    pub diff_neighbors_i: Vec<Vec<usize>>,
    pub diff_neighbors_j: Vec<Vec<usize>>,
    /// Neighborhood Jaccard weight per common gene, aligned with `common`.
    pub lambda: Vec<f64>,
}

impl AnchorSet {
    /// Swap the roles of the two graphs.
    pub fn flipped(&self) -> AnchorSet {
        AnchorSet {
            common: self.common.iter().map(|&(a, b)| (b, a)).collect(),
            diff_i: self.diff_j.clone(),
            diff_j: self.diff_i.clone(),
            diff_neighbors_i: self.diff_neighbors_j.clone(),
            diff_neighbors_j: self.diff_neighbors_i.clone(),
            lambda: self.lambda.clone(),
        }
    }

    /// Re-index onto node subsets (`keep_*` hold original indices, in the
    /// subgraph's order). Entries touching dropped nodes are removed.
    pub fn restrict(&self, keep_i: &[usize], keep_j: &[usize]) -> AnchorSet {
        fn positions(keep: &[usize]) -> HashMap<usize, usize> {
            keep.iter().enumerate().map(|(p, &n)| (n, p)).collect()
        }
        let (pi, pj) = (positions(keep_i), positions(keep_j));
        let mut common = Vec::new();
        let mut lambda = Vec::new();
        for (&(a, b), &l) in self.common.iter().zip(&self.lambda) {
            if let (Some(&a), Some(&b)) = (pi.get(&a), pj.get(&b)) {
                common.push((a, b));
                lambda.push(l);
            }
        }
        let remap = |diff: &[usize], nbrs: &[Vec<usize>], pos: &HashMap<usize, usize>| {
            let mut d = Vec::new();
            let mut n = Vec::new();
            for (g, nb) in diff.iter().zip(nbrs) {
                if let Some(&g) = pos.get(g) {
                    d.push(g);
                    n.push(nb.iter().filter_map(|h| pos.get(h).copied()).collect());
                }
            }
            (d, n)
        };
        let (diff_i, diff_neighbors_i) = remap(&self.diff_i, &self.diff_neighbors_i, &pi);
        let (diff_j, diff_neighbors_j) = remap(&self.diff_j, &self.diff_neighbors_j, &pj);
        AnchorSet { common, diff_i, diff_j, diff_neighbors_i, diff_neighbors_j, lambda }
    }
}

fn by_name(g: &GeneGraph) -> BTreeMap<&str, usize> {
    g.genes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
}

/// Jaccard overlap of the neighbor-name sets of each common gene; 0 when
/// both neighborhoods are empty.
pub fn jaccard_weights(gi: &GeneGraph, gj: &GeneGraph, common: &[(usize, usize)]) -> Vec<f64> {
    common
        .iter()
        .map(|&(a, b)| name_jaccard(&gi.neighbor_names(a), &gj.neighbor_names(b)))
        .collect()
}

pub fn name_jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

pub fn anchor_sets(gi: &GeneGraph, gj: &GeneGraph) -> AnchorSet {
    let (ni, nj) = (by_name(gi), by_name(gj));
    let common: Vec<(usize, usize)> = ni
        .iter()
        .filter_map(|(name, &a)| nj.get(name).map(|&b| (a, b)))
        .collect();
    let diff_i: Vec<usize> = ni.iter().filter(|(n, _)| !nj.contains_key(*n)).map(|(_, &i)| i).collect();
    let diff_j: Vec<usize> = nj.iter().filter(|(n, _)| !ni.contains_key(*n)).map(|(_, &j)| j).collect();
    let lambda = jaccard_weights(gi, gj, &common);
    AnchorSet {
        diff_neighbors_i: diff_i.iter().map(|&g| gi.neighbors(g).to_vec()).collect(),
        diff_neighbors_j: diff_j.iter().map(|&g| gj.neighbors(g).to_vec()).collect(),
        common,
        diff_i,
        diff_j,
        lambda,
    }
}

/// Anchor sets for every ordered pair `(i, j)`, `i != j`, computed once per
/// unordered pair in parallel.
pub fn all_anchor_sets(graphs: &[GeneGraph]) -> BTreeMap<(usize, usize), AnchorSet> {
    let pairs: Vec<(usize, usize)> = (0..graphs.len())
        .flat_map(|i| ((i + 1)..graphs.len()).map(move |j| (i, j)))
        .collect();
    let sets: Vec<AnchorSet> = pairs
        .par_iter()
        .map(|&(i, j)| anchor_sets(&graphs[i], &graphs[j]))
        .collect();
    let mut out = BTreeMap::new();
    for (&(i, j), s) in pairs.iter().zip(sets) {
        out.insert((j, i), s.flipped());
        out.insert((i, j), s);
    }
    out
}

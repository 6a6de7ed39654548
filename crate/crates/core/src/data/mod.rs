//! Count matrices, dataset manifests, QC and synthetic data.

mod collection;
pub mod mtx;
mod qc;
mod synthetic;

pub use collection::{
    load_collection, parse_coords_tsv, parse_manifest, parse_names, save_collection, Dataset,
};
pub use qc::{qc_filter, QcConfig};
pub use synthetic::{generate_synthetic, PlantedTruth, SyntheticCollection, SyntheticSpec};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "scRNA")]
    ScRna,
    #[serde(rename = "scATAC-activity")]
    ScAtacActivity,
    #[serde(rename = "spatial")]
    Spatial,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::ScRna => "scRNA",
            Modality::ScAtacActivity => "scATAC-activity",
            Modality::Spatial => "spatial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scRNA" => Ok(Modality::ScRna),
            "scATAC-activity" => Ok(Modality::ScAtacActivity),
            "spatial" => Ok(Modality::Spatial),
            other => Err(CoreError::parse("modality", format!("unknown modality {other:?}"))),
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One entry of a collection manifest. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub tissue: String,
    pub modality: Modality,
    pub species: String,
    pub counts_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords_path: Option<String>,
}

/// Descriptive metadata carried along with every per-dataset artifact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset_id: String,
    pub tissue: String,
    pub modality: Modality,
    pub species: String,
}

impl From<&DatasetManifest> for DatasetMeta {
    fn from(m: &DatasetManifest) -> Self {
        Self {
            dataset_id: m.dataset_id.clone(),
            tissue: m.tissue.clone(),
            modality: m.modality,
            species: m.species.clone(),
        }
    }
}

/// Sparse cells × genes UMI counts in compressed-column layout.
///
/// Column `g` holds the nonzero counts of gene `g`; row indices within a
/// column are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n_cells: usize,
    col_ptr: Vec<u64>,
    row_idx: Vec<u64>,
    values: Vec<u64>,
    pub barcodes: Vec<String>,
    pub genes: Vec<String>,
    pub coords: Option<Vec<[f64; 2]>>,
}

impl CountMatrix {
    /// Build from (cell, gene, count) triplets. Zero counts are dropped;
    /// duplicate coordinates are rejected.
    pub fn from_triplets(
        barcodes: Vec<String>,
        genes: Vec<String>,
        triplets: impl IntoIterator<Item = (usize, usize, u64)>,
    ) -> Result<Self> {
        let n_cells = barcodes.len();
        let n_genes = genes.len();
        let mut per_gene: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n_genes];
        for (c, g, v) in triplets {
            if c >= n_cells || g >= n_genes {
                return Err(CoreError::Data(format!(
                    "entry ({c}, {g}) outside {n_cells} cells x {n_genes} genes"
                )));
            }
            if v > 0 {
                per_gene[g].push((c as u64, v));
            }
        }
        let mut col_ptr = Vec::with_capacity(n_genes + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0u64);
        for (g, mut col) in per_gene.into_iter().enumerate() {
            col.sort_unstable_by_key(|e| e.0);
            if col.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(CoreError::Data(format!(
                    "duplicate entry in gene column {}",
                    genes[g]
                )));
            }
            for (c, v) in col {
                row_idx.push(c);
                values.push(v);
            }
            col_ptr.push(row_idx.len() as u64);
        }
        let m = Self {
            n_cells,
            col_ptr,
            row_idx,
            values,
            barcodes,
            genes,
            coords: None,
        };
        m.check_names()?;
        Ok(m)
    }

    /// Build from a dense row-major cells × genes array of counts.
    pub fn from_dense(
        barcodes: Vec<String>,
        genes: Vec<String>,
        dense: &ndarray::Array2<u64>,
    ) -> Result<Self> {
        if dense.dim() != (barcodes.len(), genes.len()) {
            return Err(CoreError::Data(format!(
                "dense matrix {:?} does not match {} barcodes x {} genes",
                dense.dim(),
                barcodes.len(),
                genes.len()
            )));
        }
        let triplets = dense
            .indexed_iter()
            .filter(|(_, &v)| v > 0)
            .map(|((c, g), &v)| (c, g, v));
        Self::from_triplets(barcodes, genes, triplets)
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.genes.len());
        for g in &self.genes {
            if !seen.insert(g.as_str()) {
                return Err(CoreError::Data(format!("duplicate gene name {g}")));
            }
        }
        Ok(())
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != self.n_cells {
            return Err(CoreError::Data(format!(
                "{} coordinate rows for {} barcodes",
                coords.len(),
                self.n_cells
            )));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero (cell, count) pairs of one gene.
    pub fn column(&self, g: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let (a, b) = (self.col_ptr[g] as usize, self.col_ptr[g + 1] as usize);
        self.row_idx[a..b]
            .iter()
            .zip(&self.values[a..b])
            .map(|(&r, &v)| (r as usize, v))
    }

    pub fn dense_column(&self, g: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cells];
        for (c, v) in self.column(g) {
            out[c] = v as f64;
        }
        out
    }

    /// Number of cells where gene `g` is nonzero.
    pub fn detected(&self, g: usize) -> usize {
        (self.col_ptr[g + 1] - self.col_ptr[g]) as usize
    }

    pub fn gene_total(&self, g: usize) -> u64 {
        self.column(g).map(|(_, v)| v).sum()
    }

    /// Sequencing depth of every cell (row sums over all genes).
    pub fn depths(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.n_cells];
        for (&r, &v) in self.row_idx.iter().zip(&self.values) {
            d[r as usize] += v;
        }
        d
    }

    /// All nonzero entries as (cell, gene, count), gene-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        (0..self.n_genes()).flat_map(move |g| self.column(g).map(move |(c, v)| (c, g, v)))
    }

    /// Dense cells × genes view of a subset of genes, as f64.
    pub fn dense_genes(&self, genes: &[usize]) -> ndarray::Array2<f64> {
        let mut out = ndarray::Array2::zeros((self.n_cells, genes.len()));
        for (j, &g) in genes.iter().enumerate() {
            for (c, v) in self.column(g) {
                out[[c, j]] = v as f64;
            }
        }
        out
    }

    /// Keep the given cells and genes (both in the given order).
    pub fn subset(&self, cells: &[usize], genes: &[usize]) -> Result<Self> {
        let mut new_row = vec![usize::MAX; self.n_cells];
        for (i, &c) in cells.iter().enumerate() {
            new_row[c] = i;
        }
        let mut triplets = Vec::new();
        for (j, &g) in genes.iter().enumerate() {
            for (c, v) in self.column(g) {
                if new_row[c] != usize::MAX {
                    triplets.push((new_row[c], j, v));
                }
            }
        }
        let barcodes = cells.iter().map(|&c| self.barcodes[c].clone()).collect();
        let names = genes.iter().map(|&g| self.genes[g].clone()).collect();
        let mut m = Self::from_triplets(barcodes, names, triplets)?;
        if let Some(coords) = &self.coords {
            m.coords = Some(cells.iter().map(|&c| coords[c]).collect());
        }
        Ok(m)
    }

    pub fn gene_index(&self, name: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == name)
    }
}

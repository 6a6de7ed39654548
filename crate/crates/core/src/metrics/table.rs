use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;

use crate::{CoreError, Result};

/// Key columns of one embedding row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub gene: String,
    pub dataset: String,
    pub tissue: String,
    pub modality: String,
}

/// Gene embeddings from one or more datasets, one row per (gene, dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub keys: Vec<RowKey>,
    pub values: Array2<f64>,
}

const KEY_COLUMNS: [&str; 4] = ["gene", "dataset", "tissue", "modality"];

impl EmbeddingTable {
    pub fn new(keys: Vec<RowKey>, values: Array2<f64>) -> Result<Self> {
        if keys.len() != values.nrows() {
            return Err(CoreError::Data(format!("{} keys for {} embedding rows", keys.len(), values.nrows())));
        }
        let mut seen = BTreeSet::new();
        for k in &keys {
            if !seen.insert((k.gene.as_str(), k.dataset.as_str())) {
                return Err(CoreError::Data(format!("duplicate row for gene {} in dataset {}", k.gene, k.dataset)));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Data("embedding contains non-finite values".into()));
        }
        Ok(Self { keys, values })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn datasets(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.keys.iter().map(|k| k.dataset.as_str()).collect();
        set.into_iter().collect()
    }

    /// Row indices of one dataset, in table order.
    pub fn rows_of(&self, dataset: &str) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.keys[r].dataset == dataset).collect()
    }

    /// Rows whose gene name occurs in at least two datasets.
    pub fn common_rows(&self) -> Vec<usize> {
        let mut counts = std::collections::HashMap::new();
        for k in &self.keys {
            *counts.entry(k.gene.as_str()).or_insert(0usize) += 1;
        }
        (0..self.len()).filter(|&r| counts[self.keys[r].gene.as_str()] >= 2).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> EmbeddingTable {
        EmbeddingTable {
            keys: rows.iter().map(|&r| self.keys[r].clone()).collect(),
            values: self.values.select(ndarray::Axis(0), rows),
        }
    }

    /// Concatenate tables with the same width.
    pub fn concat(parts: &[EmbeddingTable]) -> Result<Self> {
        let dim = parts.first().map(|p| p.dim()).unwrap_or(0);
        if parts.iter().any(|p| p.dim() != dim) {
            return Err(CoreError::Data("embedding tables have different widths".into()));
        }
        let keys = parts.iter().flat_map(|p| p.keys.iter().cloned()).collect();
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = if views.is_empty() {
            Array2::zeros((0, 0))
        } else {
            ndarray::concatenate(ndarray::Axis(0), &views).expect("widths checked")
        };
        Self::new(keys, values)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header: Vec<String> = KEY_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..self.dim()).map(|i| format!("v{i}")));
        w.write_record(&header).expect("in-memory write");
        for (k, row) in self.keys.iter().zip(self.values.rows()) {
            let mut rec = vec![k.gene.clone(), k.dataset.clone(), k.tissue.clone(), k.modality.clone()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let ctx = "embedding csv";
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| CoreError::parse(ctx, e.to_string()))?.clone();
        if header.len() < 5 || header.iter().take(4).ne(KEY_COLUMNS.iter().copied()) {
            return Err(CoreError::parse(ctx, "header must start with gene,dataset,tissue,modality and have value columns"));
        }
        for (i, h) in header.iter().skip(4).enumerate() {
            if h != format!("v{i}") {
                return Err(CoreError::parse(ctx, format!("value column {i} is named {h:?}")));
            }
        }
        let dim = header.len() - 4;
        let mut keys = Vec::new();
        let mut flat = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| CoreError::parse(ctx, e.to_string()))?;
            if rec.len() != dim + 4 {
                return Err(CoreError::parse(ctx, format!("row {} has {} fields", line + 1, rec.len())));
            }
            let key = RowKey {
                gene: rec[0].to_string(),
                dataset: rec[1].to_string(),
                tissue: rec[2].to_string(),
                modality: rec[3].to_string(),
            };
            if key.gene.is_empty() || key.dataset.is_empty() {
                return Err(CoreError::parse(ctx, format!("row {} has an empty gene or dataset", line + 1)));
            }
            keys.push(key);
            for f in rec.iter().skip(4) {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| CoreError::parse(ctx, format!("row {}: {f:?} is not a number", line + 1)))?;
                if !v.is_finite() {
                    return Err(CoreError::parse(ctx, format!("row {}: non-finite value", line + 1)));
                }
                flat.push(v);
            }
        }
        let values = Array2::from_shape_vec((keys.len(), dim), flat).map_err(|e| CoreError::parse(ctx, e.to_string()))?;
        Self::new(keys, values).map_err(|e| CoreError::parse(ctx, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| CoreError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse_csv(&text)
    }
}

use serde::{Deserialize, Serialize};

use super::CountMatrix;
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    /// Barcodes with fewer total counts are removed.
    pub min_counts: u64,
    /// Genes detected (nonzero) in fewer barcodes are removed.
    pub min_cells: usize,
    /// Case-insensitive gene-name prefixes of mitochondrial genes.
    pub mito_prefixes: Vec<String>,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            min_counts: 200,
            min_cells: 3,
            mito_prefixes: vec!["MT-".into()],
        }
    }
}

fn is_mito(name: &str, prefixes: &[String]) -> bool {
    prefixes.iter().any(|p| {
        name.len() >= p.len() && name.as_bytes()[..p.len()].eq_ignore_ascii_case(p.as_bytes())
    })
}

/// One barcode pass followed by one gene pass.
fn qc_pass(m: &CountMatrix, cfg: &QcConfig) -> Result<CountMatrix> {
    let depths = m.depths();
    let cells: Vec<usize> = (0..m.n_cells())
        .filter(|&c| depths[c] >= cfg.min_counts)
        .collect();
    if cells.is_empty() {
        return Err(CoreError::Data("all cells/genes filtered".into()));
    }
    let kept_cells = m.subset(&cells, &(0..m.n_genes()).collect::<Vec<_>>())?;
    let genes: Vec<usize> = (0..kept_cells.n_genes())
        .filter(|&g| {
            kept_cells.detected(g) >= cfg.min_cells
                && !is_mito(&kept_cells.genes[g], &cfg.mito_prefixes)
        })
        .collect();
    if genes.is_empty() {
        return Err(CoreError::Data("all cells/genes filtered".into()));
    }
    kept_cells.subset(&(0..kept_cells.n_cells()).collect::<Vec<_>>(), &genes)
}

/// Barcode then gene filtering, repeated until nothing changes.
///
/// The first pass is the plain barcode-then-gene filter. Removing genes can
/// push a barcode back under `min_counts`, so passes repeat until a fixed
/// point, which makes the filter idempotent.
pub fn qc_filter(m: &CountMatrix, cfg: &QcConfig) -> Result<CountMatrix> {
    if m.n_cells() == 0 || m.n_genes() == 0 {
        return Err(CoreError::Data("empty count matrix".into()));
    }
    let mut cur = qc_pass(m, cfg)?;
    loop {
        let next = qc_pass(&cur, cfg)?;
        if next.n_cells() == cur.n_cells() && next.n_genes() == cur.n_genes() {
            return Ok(next);
        }
        cur = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(cells: usize, genes: &[&str], f: impl Fn(usize, usize) -> u64) -> CountMatrix {
        let triplets: Vec<_> = (0..cells)
            .flat_map(|c| (0..genes.len()).map(move |g| (c, g)))
            .map(|(c, g)| (c, g, f(c, g)))
            .collect();
        CountMatrix::from_triplets(
            (0..cells).map(|c| format!("bc{c}")).collect(),
            genes.iter().map(|s| s.to_string()).collect(),
            triplets,
        )
        .unwrap()
    }

    #[test]
    fn barcode_threshold_is_inclusive_at_200() {
        // Cell 0 totals 150, cell 1 totals 200, cells 2..5 are large.
        let m = matrix(6, &["A", "B"], |c, g| match (c, g) {
            (0, _) => 75,
            (1, _) => 100,
            _ => 500,
        });
        let q = qc_filter(&m, &QcConfig::default()).unwrap();
        assert_eq!(q.barcodes, vec!["bc1", "bc2", "bc3", "bc4", "bc5"]);
    }

    #[test]
    fn gene_detected_in_two_cells_dropped() {
        let m = matrix(5, &["A", "RARE", "C"], |c, g| match g {
            1 => u64::from(c < 2),
            _ => 300,
        });
        let q = qc_filter(&m, &QcConfig::default()).unwrap();
        assert_eq!(q.genes, vec!["A", "C"]);
    }

    #[test]
    fn mitochondrial_genes_dropped_case_insensitive() {
        let m = matrix(4, &["MT-CO1", "mt-nd1", "MTOR", "B"], |_, _| 100);
        let q = qc_filter(&m, &QcConfig::default()).unwrap();
        assert_eq!(q.genes, vec!["MTOR", "B"]);
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let m = matrix(3, &["A"], |_, _| 10);
        let e = qc_filter(&m, &QcConfig::default()).unwrap_err().to_string();
        assert!(e.contains("all cells/genes filtered"));
    }

    proptest! {
        #[test]
        fn qc_is_idempotent(seed in proptest::collection::vec(0u64..120, 8 * 6)) {
            let genes = ["A", "B", "MT-C", "D", "E", "F"];
            let m = matrix(8, &genes, |c, g| seed[c * 6 + g] * u64::from(seed[c * 6 + g] % 3 != 0));
            let cfg = QcConfig::default();
            if let Ok(once) = qc_filter(&m, &cfg) {
                let twice = qc_filter(&once, &cfg).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}

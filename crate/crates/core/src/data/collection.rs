use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::mtx::{parse_mtx, write_mtx, MtxData};
use super::{CountMatrix, DatasetManifest, DatasetMeta, Modality};
use crate::{CoreError, Result};

/// A loaded dataset: metadata plus counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub counts: CountMatrix,
}

/// Parse and validate a manifest (JSON array of entries).
pub fn parse_manifest(text: &str) -> Result<Vec<DatasetManifest>> {
    let entries: Vec<DatasetManifest> =
        serde_json::from_str(text).map_err(|e| CoreError::parse("manifest", e.to_string()))?;
    let mut ids = HashSet::new();
    for e in &entries {
        if e.dataset_id.is_empty() {
            return Err(CoreError::Data("manifest entry with empty dataset_id".into()));
        }
        if !ids.insert(e.dataset_id.as_str()) {
            return Err(CoreError::Data(format!(
                "duplicate dataset_id {}",
                e.dataset_id
            )));
        }
        if e.modality == Modality::Spatial && e.coords_path.is_none() {
            return Err(CoreError::Data(format!(
                "dataset {}: coords required for spatial modality",
                e.dataset_id
            )));
        }
    }
    Ok(entries)
}

/// One name per line; trailing empty line allowed, blank names rejected.
/// Extra tab-separated columns (as in 10x `features.tsv`) are ignored.
pub fn parse_names(text: &str, what: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let name = line.split('\t').next().unwrap_or("").trim();
        if name.is_empty() {
            return Err(CoreError::parse(
                format!("{what} line {}", i + 1),
                "empty name",
            ));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

/// Coordinates TSV with an `x<TAB>y` header and one row per barcode.
pub fn parse_coords_tsv(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CoreError::parse("coords", "empty file"))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != ["x", "y"] {
        return Err(CoreError::parse("coords", "header must be 'x<TAB>y'"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 {
            return Err(CoreError::parse(
                format!("coords line {}", i + 2),
                "expected two columns",
            ));
        }
        let p = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| {
                CoreError::parse(format!("coords line {}", i + 2), format!("bad number {s:?}"))
            })?;
            if !v.is_finite() {
                return Err(CoreError::parse(
                    format!("coords line {}", i + 2),
                    "non-finite coordinate",
                ));
            }
            Ok(v)
        };
        out.push([p(f[0])?, p(f[1])?]);
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CoreError::io(path, e))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load a counts directory: `matrix.mtx` (genes × barcodes) with sidecar
/// `genes.tsv` and `barcodes.tsv` next to it.
pub fn load_counts(mtx_path: &Path) -> Result<CountMatrix> {
    let dir = mtx_path.parent().unwrap_or(Path::new("."));
    let mtx = parse_mtx(&read(mtx_path)?)?;
    let genes = parse_names(&read(&dir.join("genes.tsv"))?, "genes.tsv")?;
    let barcodes = parse_names(&read(&dir.join("barcodes.tsv"))?, "barcodes.tsv")?;
    if mtx.rows != genes.len() || mtx.cols != barcodes.len() {
        return Err(CoreError::Data(format!(
            "{}: matrix is {}x{} but there are {} genes and {} barcodes",
            mtx_path.display(),
            mtx.rows,
            mtx.cols,
            genes.len(),
            barcodes.len()
        )));
    }
    CountMatrix::from_triplets(
        barcodes,
        genes,
        mtx.entries.into_iter().map(|(g, c, v)| (c, g, v)),
    )
}

pub fn load_collection(manifest_path: &Path) -> Result<Vec<Dataset>> {
    let entries = parse_manifest(&read(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let load = || -> Result<Dataset> {
                let mut counts = load_counts(&resolve(base, &e.counts_path))?;
                if let Some(cp) = &e.coords_path {
                    let coords = parse_coords_tsv(&read(&resolve(base, cp))?)?;
                    counts = counts.with_coords(coords)?;
                }
                Ok(Dataset {
                    meta: e.into(),
                    counts,
                })
            };
            load().map_err(|err| err.in_dataset(&e.dataset_id))
        })
        .collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CoreError::io(path, e))
}

/// Write every dataset under `dir/<dataset_id>/` plus `dir/manifest.json`.
/// Returns the manifest path.
pub fn save_collection(dir: &Path, datasets: &[Dataset]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut manifest = Vec::with_capacity(datasets.len());
    for d in datasets {
        let id = &d.meta.dataset_id;
        let sub = dir.join(id);
        fs::create_dir_all(&sub).map_err(|e| CoreError::io(&sub, e))?;
        let m = &d.counts;
        let mtx = MtxData {
            rows: m.n_genes(),
            cols: m.n_cells(),
            entries: m.triplets().map(|(c, g, v)| (g, c, v)).collect(),
        };
        write(&sub.join("matrix.mtx"), &write_mtx(&mtx))?;
        write(&sub.join("genes.tsv"), &lines(&m.genes))?;
        write(&sub.join("barcodes.tsv"), &lines(&m.barcodes))?;
        let coords_path = match &m.coords {
            Some(coords) => {
                let mut s = String::from("x\ty\n");
                for [x, y] in coords {
                    s.push_str(&format!("{x}\t{y}\n"));
                }
                write(&sub.join("coords.tsv"), &s)?;
                Some(format!("{id}/coords.tsv"))
            }
            None => None,
        };
        manifest.push(DatasetManifest {
            dataset_id: id.clone(),
            tissue: d.meta.tissue.clone(),
            modality: d.meta.modality,
            species: d.meta.species.clone(),
            counts_path: format!("{id}/matrix.mtx"),
            coords_path,
        });
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&path, &(json + "\n"))?;
    Ok(path)
}

fn lines(names: &[String]) -> String {
    let mut s = String::new();
    for n in names {
        s.push_str(n);
        s.push('\n');
    }
    s
}

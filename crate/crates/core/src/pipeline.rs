//! Stage functions behind the command line. Each stage reads only the
//! on-disk artifacts of the stage before it.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! graphs/index.json            dataset order and per-dataset input hashes
//! graphs/<id>/                 graph bundle, edges, optional spatial test table
//! anchors.json                 anchor sets per ordered graph pair
//! model.ckpt                   trained model
//! checkpoints/epoch_<n>.ckpt   periodic checkpoints
//! trainlog.csv                 per-epoch, per-dataset loss components
//! train_time.json              wall time of the training run
//! embeddings.csv               gene embeddings
//! report.json / report.txt / plot.csv
//! ```
//!
//! Every file gets a `<name>.meta.json` sidecar with the build id, seed and
//! config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coexpression::{build_edges, cscore_test, edges_to_tsv, estimate_moments_irls, DEFAULT_ALPHA};
use crate::data::{
    generate_synthetic, load_collection, parse_manifest, qc_filter, save_collection, CountMatrix, Dataset, Modality,
    QcConfig, SyntheticSpec,
};
use crate::graph::{all_anchor_sets, assemble_graph, load_bundle, save_bundle, AnchorSet, GeneGraph, GraphEdge};
use crate::metrics::{aggregate, evaluate, EmbeddingTable, MetricsConfig, MetricsReport, RowKey, METRIC_NAMES};
use crate::model::{GraphInput, Model};
use crate::preprocess::{fit_nb_glm, pearson_residuals, select_hvgs, select_se_genes, sparkx_test};
use crate::training::{train_with_callback, training_features, Hyperparams, TrainLog};
use crate::{CoreError, Result};

pub const BUILD_ID: &str = match option_env!("MUSEGNN_BUILD_ID") {
    Some(id) => id,
    None => concat!("musegnn-", env!("CARGO_PKG_VERSION")),
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// HVGs per dataset, clamped to the number of genes left after QC.
    pub n_hvg: usize,
    /// Edge threshold on the co-expression p-value.
    pub alpha: f64,
    /// Spatially expressed genes kept before normalization on spatial data.
    pub n_se_genes: usize,
    pub qc: QcConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            n_hvg: 1000,
            alpha: DEFAULT_ALPHA,
            n_se_genes: 1000,
            qc: QcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub hyperparams: Hyperparams,
    pub preprocess: PreprocessConfig,
    pub metrics: MetricsConfig,
    /// Overrides the seeds inside `hyperparams` and `metrics`.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.json"),
            out_dir: PathBuf::from("out"),
            hyperparams: Hyperparams::default(),
            preprocess: PreprocessConfig::default(),
            metrics: MetricsConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::Config(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        if p.n_hvg == 0 || p.n_se_genes == 0 {
            return Err(CoreError::Config("n_hvg and n_se_genes must be positive".into()));
        }
        if !(p.alpha > 0.0 && p.alpha < 1.0) {
            return Err(CoreError::Config("alpha must be in (0, 1)".into()));
        }
        if self.metrics.k == 0 || !(self.metrics.resolution > 0.0) {
            return Err(CoreError::Config("metrics k and resolution must be positive".into()));
        }
        self.hyperparams().validate()
    }

    /// Hyperparameters with the pipeline seed applied.
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            seed: self.seed,
            ..self.hyperparams.clone()
        }
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            seed: self.seed,
            ..self.metrics.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn graphs_dir(&self) -> PathBuf {
        self.out_dir.join("graphs")
    }

    pub fn model_path(&self) -> PathBuf {
        self.out_dir.join("model.ckpt")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.out_dir.join("embeddings.csv")
    }

    pub fn trainlog_path(&self) -> PathBuf {
        self.out_dir.join("trainlog.csv")
    }
}

/// Provenance written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub build_id: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Self {
            build_id: BUILD_ID.to_string(),
            seed,
            config_hash,
        }
    }

    pub fn of(cfg: &PipelineConfig) -> Self {
        Self::new(cfg.seed, cfg.hash())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CoreError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))
}

fn write_sidecar(path: &Path, prov: &Provenance) -> Result<()> {
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(prov).expect("provenance serializes");
    fs::write(&side, json + "\n").map_err(|e| CoreError::io(&side, e))
}

/// Write `contents` to `path` along with its provenance sidecar.
pub fn write_artifact(path: &Path, contents: impl AsRef<[u8]>, prov: &Provenance) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| CoreError::io(path, e))?;
    write_sidecar(path, prov)
}

// ---------------------------------------------------------------- simulate

/// Write a synthetic collection and its planted truth under `dir`.
/// Returns the manifest path.
pub fn simulate(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    let out = generate_synthetic(spec)?;
    let manifest = save_collection(dir, &out.datasets)?;
    let spec_hash = hex(&Sha256::digest(serde_json::to_vec(spec).expect("spec serializes")));
    let prov = Provenance::new(spec.seed, spec_hash);
    let truth = serde_json::to_string_pretty(&out.truth).expect("truth serializes");
    write_artifact(&dir.join("truth.json"), truth + "\n", &prov)?;
    write_sidecar(&manifest, &prov)?;
    Ok(manifest)
}

// ------------------------------------------------------------ build-graphs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// QC, normalization, HVGs, co-expression.
    Standard,
    /// QC, spatial-variability screen, then the standard route on the
    /// spatially expressed genes.
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBuild {
    pub dataset_id: String,
    pub route: Route,
    pub input_hash: String,
    pub cached: bool,
    pub n_nodes: usize,
    pub n_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphIndex {
    pub datasets: Vec<DatasetBuild>,
}

const INDEX_FILE: &str = "index.json";
const INPUT_HASH_FILE: &str = "input.sha256";

/// Hash of everything a dataset's graph depends on: preprocessing knobs,
/// the manifest entry and the bytes of the referenced files.
fn input_hash(cfg: &PreprocessConfig, entry_json: &[u8], files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(BUILD_ID.as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(entry_json);
    for f in files {
        let bytes = fs::read(f).map_err(|e| CoreError::io(f, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

fn sibling(path: &Path, name: &str) -> Result<PathBuf> {
    let dir = path
        .parent()
        .ok_or_else(|| CoreError::Data(format!("{} has no parent directory", path.display())))?;
    Ok(dir.join(name))
}

/// Per-dataset input hashes in manifest order.
fn manifest_hashes(cfg: &PipelineConfig) -> Result<Vec<(String, String)>> {
    let entries = parse_manifest(&read_text(&cfg.manifest)?)?;
    let base = cfg.manifest.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let resolve = |p: &str| {
                let p = Path::new(p);
                if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
            };
            let mut files = vec![resolve(&e.counts_path)];
            for name in ["genes.tsv", "barcodes.tsv"] {
                files.push(sibling(&files[0], name)?);
            }
            if let Some(c) = &e.coords_path {
                files.push(resolve(c));
            }
            let entry = serde_json::to_vec(e).expect("manifest entry serializes");
            let h = input_hash(&cfg.preprocess, &entry, &files).map_err(|err| err.in_dataset(&e.dataset_id))?;
            Ok((e.dataset_id.clone(), h))
        })
        .collect()
}

fn route_of(modality: Modality) -> Route {
    match modality {
        Modality::Spatial => Route::Spatial,
        Modality::ScRna | Modality::ScAtacActivity => Route::Standard,
    }
}

/// One dataset from raw counts to a gene graph. Writes the edge table and,
/// for spatial data, the spatial test table into `dir`.
pub fn build_dataset_graph(d: &Dataset, pre: &PreprocessConfig, dir: &Path) -> Result<GeneGraph> {
    let mut m: CountMatrix = qc_filter(&d.counts, &pre.qc)?;
    create_dir(dir)?;
    if route_of(d.meta.modality) == Route::Spatial {
        let test = sparkx_test(&m)?;
        let p = dir.join("spatial_test.tsv");
        fs::write(&p, test.to_tsv()).map_err(|e| CoreError::io(&p, e))?;
        let mut keep = select_se_genes(&test, pre.n_se_genes.min(m.n_genes()))?;
        keep.sort_unstable();
        m = m.subset(&(0..m.n_cells()).collect::<Vec<_>>(), &keep)?;
        log::info!("{}: {} spatially expressed genes", d.meta.dataset_id, keep.len());
    }
    let fit = fit_nb_glm(&m)?;
    let residuals = pearson_residuals(&m, &fit)?;
    let hvgs = select_hvgs(&residuals, pre.n_hvg.min(residuals.genes.len()))?;
    let est = estimate_moments_irls(&m, &hvgs)?;
    let test = cscore_test(&est, &m)?;
    let edges = build_edges(&test.pvalue, pre.alpha)?;
    let p = dir.join("coexpression.tsv");
    fs::write(&p, edges_to_tsv(&est.genes, &edges, &est.rho, &test.pvalue)).map_err(|e| CoreError::io(&p, e))?;
    let graph_edges = edges
        .edges
        .iter()
        .map(|&(a, b)| GraphEdge {
            a,
            b,
            rho: est.rho[[a, b]],
            pval: test.pvalue[[a, b]],
        })
        .collect();
    assemble_graph(&residuals, &hvgs, graph_edges, d.meta.clone())
}

/// Build or reuse every dataset's graph bundle, then write the anchor sets.
/// A dataset is skipped when its stored input hash matches and its bundle
/// loads.
pub fn build_graphs(cfg: &PipelineConfig) -> Result<GraphIndex> {
    cfg.validate()?;
    let prov = Provenance::of(cfg);
    let graphs_dir = cfg.graphs_dir();
    create_dir(&graphs_dir)?;
    let hashes = manifest_hashes(cfg)?;
    let mut pending: Vec<usize> = Vec::new();
    let mut graphs: Vec<Option<GeneGraph>> = Vec::with_capacity(hashes.len());
    for (i, (id, h)) in hashes.iter().enumerate() {
        let dir = graphs_dir.join(id);
        let stored = fs::read_to_string(dir.join(INPUT_HASH_FILE)).ok();
        let cached = match stored {
            Some(s) if s.trim() == h => load_bundle(&dir).ok(),
            _ => None,
        };
        if cached.is_none() {
            pending.push(i);
        }
        graphs.push(cached);
    }

    if !pending.is_empty() {
        let datasets = load_collection(&cfg.manifest)?;
        for &i in &pending {
            let d = &datasets[i];
            let id = &d.meta.dataset_id;
            log::info!("building graph for {id}");
            let dir = graphs_dir.join(id);
            let g = build_dataset_graph(d, &cfg.preprocess, &dir).map_err(|e| e.in_dataset(id))?;
            save_bundle(&dir, &g).map_err(|e| e.in_dataset(id))?;
            for f in ["graph.json", "edges.tsv", "features.bin", "coexpression.tsv"] {
                write_sidecar(&dir.join(f), &prov)?;
            }
            if dir.join("spatial_test.tsv").exists() {
                write_sidecar(&dir.join("spatial_test.tsv"), &prov)?;
            }
            write_artifact(&dir.join(INPUT_HASH_FILE), format!("{}\n", hashes[i].1), &prov)?;
            graphs[i] = Some(g);
        }
    }

    let graphs: Vec<GeneGraph> = graphs.into_iter().map(|g| g.expect("every graph built")).collect();
    let index = GraphIndex {
        datasets: graphs
            .iter()
            .zip(&hashes)
            .enumerate()
            .map(|(i, (g, (id, h)))| DatasetBuild {
                dataset_id: id.clone(),
                route: route_of(g.meta.modality),
                input_hash: h.clone(),
                cached: !pending.contains(&i),
                n_nodes: g.n_nodes(),
                n_edges: g.edges.len(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    write_artifact(&graphs_dir.join(INDEX_FILE), json + "\n", &prov)?;
    write_anchors(&cfg.out_dir.join("anchors.json"), &all_anchor_sets(&graphs), &prov)?;
    Ok(index)
}

#[derive(Serialize, Deserialize)]
struct AnchorEntry {
    i: usize,
    j: usize,
    anchors: AnchorSet,
}

fn write_anchors(path: &Path, anchors: &BTreeMap<(usize, usize), AnchorSet>, prov: &Provenance) -> Result<()> {
    let entries: Vec<AnchorEntry> = anchors
        .iter()
        .map(|(&(i, j), a)| AnchorEntry { i, j, anchors: a.clone() })
        .collect();
    write_artifact(path, serde_json::to_vec(&entries).expect("anchors serialize"), prov)
}

pub fn read_anchors(path: &Path) -> Result<BTreeMap<(usize, usize), AnchorSet>> {
    let entries: Vec<AnchorEntry> =
        serde_json::from_str(&read_text(path)?).map_err(|e| CoreError::parse("anchors.json", e.to_string()))?;
    Ok(entries.into_iter().map(|e| ((e.i, e.j), e.anchors)).collect())
}

/// Graph bundles in index order.
pub fn load_graphs(cfg: &PipelineConfig) -> Result<Vec<GeneGraph>> {
    let dir = cfg.graphs_dir();
    let index: GraphIndex = serde_json::from_str(&read_text(&dir.join(INDEX_FILE))?)
        .map_err(|e| CoreError::parse("graphs/index.json", e.to_string()))?;
    index
        .datasets
        .iter()
        .map(|d| load_bundle(&dir.join(&d.dataset_id)).map_err(|e| e.in_dataset(&d.dataset_id)))
        .collect()
}

// ------------------------------------------------------------ train / embed

/// One embedding row per (gene, dataset), graphs in order.
pub fn embedding_table(graphs: &[GeneGraph], embeddings: &[ndarray::Array2<f64>]) -> Result<EmbeddingTable> {
    let parts = graphs
        .iter()
        .zip(embeddings)
        .map(|(g, e)| {
            let keys = g
                .genes
                .iter()
                .map(|gene| RowKey {
                    gene: gene.clone(),
                    dataset: g.meta.dataset_id.clone(),
                    tissue: g.meta.tissue.clone(),
                    modality: g.meta.modality.as_str().to_string(),
                })
                .collect();
            EmbeddingTable::new(keys, e.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::concat(&parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTiming {
    pub wall_seconds: f64,
    pub epochs: usize,
}

pub struct TrainSummary {
    pub log: TrainLog,
    pub table: EmbeddingTable,
    pub wall_seconds: f64,
}

/// Train on the built graphs; writes the model, periodic checkpoints, the
/// loss log, the wall-time record and the embeddings.
pub fn train_stage(cfg: &PipelineConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let prov = Provenance::of(cfg);
    let hp = cfg.hyperparams();
    let graphs = load_graphs(cfg)?;
    let anchors = read_anchors(&cfg.out_dir.join("anchors.json"))?;
    let ckpt_dir = cfg.out_dir.join("checkpoints");
    let out = train_with_callback(&graphs, &anchors, &hp, |epoch, model| {
        if hp.checkpoint_every > 0 && epoch % hp.checkpoint_every == 0 {
            let p = ckpt_dir.join(format!("epoch_{epoch}.ckpt"));
            write_artifact(&p, model.to_bytes(), &prov)?;
            log::info!("checkpoint {}", p.display());
        }
        Ok(())
    })?;
    write_artifact(&cfg.model_path(), out.model.to_bytes(), &prov)?;
    write_artifact(&cfg.trainlog_path(), out.log.to_csv(), &prov)?;
    let timing = TrainTiming {
        wall_seconds: out.wall_seconds,
        epochs: hp.epochs,
    };
    let json = serde_json::to_string_pretty(&timing).expect("timing serializes");
    write_artifact(&cfg.out_dir.join("train_time.json"), json + "\n", &prov)?;
    let table = embedding_table(&graphs, &out.embeddings)?;
    write_artifact(&cfg.embeddings_path(), table.to_csv(), &prov)?;
    Ok(TrainSummary {
        log: out.log,
        table,
        wall_seconds: out.wall_seconds,
    })
}

/// Embed every built graph with a saved model.
pub fn embed_stage(cfg: &PipelineConfig, model_path: &Path, out_path: &Path) -> Result<EmbeddingTable> {
    cfg.validate()?;
    let hp = cfg.hyperparams();
    let model = Model::load(model_path)?;
    let graphs = load_graphs(cfg)?;
    let embeddings = graphs
        .iter()
        .map(|g| {
            let id = &g.meta.dataset_id;
            let run = || -> Result<_> {
                let idx = model.slot_index(id)?;
                let mut input = g.clone();
                input.features = training_features(g, &hp);
                model.embed(idx, &GraphInput::from_graph(&input)?)
            };
            run().map_err(|e| e.in_dataset(id))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = embedding_table(&graphs, &embeddings)?;
    write_artifact(out_path, table.to_csv(), &Provenance::of(cfg))?;
    Ok(table)
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub raw: Vec<(String, [f64; 6])>,
    /// Present when at least two methods were compared.
    pub report: Option<MetricsReport>,
}

/// Metrics for each `(method, embedding CSV)` and, for two or more methods,
/// the rank/score aggregation. Writes the report files into `out_dir`.
pub fn evaluate_stage(cfg: &PipelineConfig, methods: &[(String, PathBuf)]) -> Result<Evaluation> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(CoreError::Config("no embeddings to evaluate".into()));
    }
    let prov = Provenance::of(cfg);
    let graphs = load_graphs(cfg)?;
    let mcfg = cfg.metrics();
    let mut raw = Vec::with_capacity(methods.len());
    for (name, path) in methods {
        let table = EmbeddingTable::read(path)?;
        let values = evaluate(&table, &graphs, &mcfg)
            .map_err(|e| CoreError::Data(format!("method {name}: {e}")))?;
        log::info!("{name}: {values:?}");
        raw.push((name.clone(), values));
    }
    let per_method: Vec<MethodMetrics> = raw
        .iter()
        .map(|(name, v)| MethodMetrics {
            method: name.clone(),
            metrics: METRIC_NAMES.iter().map(|m| m.to_string()).zip(v.iter().copied()).collect(),
        })
        .collect();
    let json = serde_json::to_string_pretty(&per_method).expect("metrics serialize");
    write_artifact(&cfg.out_dir.join("metrics.json"), json + "\n", &prov)?;
    let report = if raw.len() >= 2 {
        let r = aggregate(&raw)?;
        write_artifact(&cfg.out_dir.join("report.json"), r.to_json() + "\n", &prov)?;
        write_artifact(&cfg.out_dir.join("report.txt"), r.to_table(), &prov)?;
        write_artifact(&cfg.out_dir.join("plot.csv"), r.to_plot_csv(), &prov)?;
        Some(r)
    } else {
        None
    };
    Ok(Evaluation { raw, report })
}

//! Graph-transformer encoder with dataset-specific and modality-shared
//! layers, and per-dataset Gram-matrix decoders.
//!
//! Parameter names:
//!
//! ```text
//! input/{dataset}/{w,b}                 cells -> hidden projection
//! dataset/{dataset}/{layer}/...         dataset-specific attention layers
//! shared/{modality|dataset}/{layer}/... shared layers (keyed by modality
//!                                       when weight sharing is on)
//! decoder/{dataset}/{w1,b1,w2,b2}       scalar MLP over Gram entries
//! ```

mod layers;
mod params;

use std::path::Path;

use musegnn_autodiff::{Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{decode_framed, encode_framed};
use crate::data::DatasetMeta;
use crate::{CoreError, Result};

pub use layers::{decode, graph_norm, transformer_conv, GraphInput, LayerTrace, GRAPHNORM_EPS};
pub use params::{Binder, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub dataset_layers: usize,
    pub shared_layers: usize,
    pub decoder_hidden: usize,
    /// Width of optional per-edge features; 0 disables the edge terms.
    pub edge_dim: usize,
    pub weight_sharing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            embed_dim: 32,
            heads: 4,
            dataset_layers: 1,
            shared_layers: 1,
            decoder_hidden: 16,
            edge_dim: 0,
            weight_sharing: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.heads == 0 || self.hidden_dim == 0 || self.embed_dim == 0 || self.decoder_hidden == 0 {
            return bad("model widths and head count must be positive".into());
        }
        if self.dataset_layers + self.shared_layers == 0 {
            return bad("the encoder needs at least one attention layer".into());
        }
        for w in [self.hidden_dim, self.embed_dim] {
            if w % self.heads != 0 {
                return bad(format!("width {w} is not divisible by {} heads", self.heads));
            }
        }
        Ok(())
    }

    fn n_layers(&self) -> usize {
        self.dataset_layers + self.shared_layers
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let out = if layer + 1 == self.n_layers() {
            self.embed_dim
        } else {
            self.hidden_dim
        };
        (self.hidden_dim, out)
    }
}

/// One registered dataset: its metadata and the width of its node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSlot {
    pub meta: DatasetMeta,
    pub input_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Kaiming,
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub datasets: Vec<DatasetSlot>,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    datasets: Vec<DatasetSlot>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

const CHECKPOINT_FORMAT: &str = "musegnn-checkpoint-v1";

impl Model {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases and
    /// unit norm scales, drawn in parameter-name order from `seed`.
    pub fn init(datasets: Vec<DatasetSlot>, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for d in &datasets {
            if !seen.insert(d.meta.dataset_id.as_str()) {
                return Err(CoreError::Config(format!("dataset {} registered twice", d.meta.dataset_id)));
            }
            if d.input_dim == 0 {
                return Err(CoreError::Config(format!("dataset {} has no input features", d.meta.dataset_id)));
            }
        }
        let mut model = Self {
            config,
            datasets,
            params: ParamStore::new(),
        };
        let mut specs = std::collections::BTreeMap::new();
        for slot in &model.datasets {
            for (name, shape, init) in model.tensor_specs(slot) {
                specs.insert(name, (shape, init));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, ((rows, cols), init)) in specs {
            let value = match init {
                Init::Zero => Array2::zeros((rows, cols)),
                Init::One => Array2::ones((rows, cols)),
                Init::Kaiming => {
                    let bound = (6.0 / rows as f64).sqrt();
                    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
                }
            };
            model.params.insert(name, value);
        }
        Ok(model)
    }

    fn tensor_specs(&self, slot: &DatasetSlot) -> Vec<(String, (usize, usize), Init)> {
        let c = &self.config;
        let id = &slot.meta.dataset_id;
        let mut out = vec![
            (format!("input/{id}/w"), (slot.input_dim, c.hidden_dim), Init::Kaiming),
            (format!("input/{id}/b"), (1, c.hidden_dim), Init::Zero),
        ];
        for layer in 0..c.n_layers() {
            let (din, dout) = c.layer_dims(layer);
            let prefix = self.layer_prefix(slot, layer);
            for m in ["q", "k", "v"] {
                out.push((format!("{prefix}/w{m}"), (din, dout), Init::Kaiming));
                out.push((format!("{prefix}/b{m}"), (1, dout), Init::Zero));
            }
            if c.edge_dim > 0 {
                out.push((format!("{prefix}/we"), (c.edge_dim, dout), Init::Kaiming));
                out.push((format!("{prefix}/be"), (1, dout), Init::Zero));
            }
            if din != dout {
                out.push((format!("{prefix}/skip"), (din, dout), Init::Kaiming));
            }
            if layer + 1 < c.n_layers() {
                out.push((format!("{prefix}/norm_alpha"), (1, dout), Init::One));
                out.push((format!("{prefix}/norm_gamma"), (1, dout), Init::One));
                out.push((format!("{prefix}/norm_beta"), (1, dout), Init::Zero));
            }
        }
        let h = c.decoder_hidden;
        let dec = format!("decoder/{id}");
        out.push((format!("{dec}/w1"), (1, h), Init::Kaiming));
        out.push((format!("{dec}/b1"), (1, h), Init::Zero));
        out.push((format!("{dec}/w2"), (h, 1), Init::Kaiming));
        out.push((format!("{dec}/b2"), (1, 1), Init::Zero));
        out
    }

    /// Key of the shared stack a dataset uses.
    pub fn shared_key(&self, slot: &DatasetSlot) -> String {
        if self.config.weight_sharing {
            slot.meta.modality.as_str().to_string()
        } else {
            slot.meta.dataset_id.clone()
        }
    }

    fn layer_prefix(&self, slot: &DatasetSlot, layer: usize) -> String {
        if layer < self.config.dataset_layers {
            format!("dataset/{}/{layer}", slot.meta.dataset_id)
        } else {
            format!("shared/{}/{}", self.shared_key(slot), layer - self.config.dataset_layers)
        }
    }

    pub fn slot_index(&self, dataset_id: &str) -> Result<usize> {
        self.datasets
            .iter()
            .position(|d| d.meta.dataset_id == dataset_id)
            .ok_or_else(|| CoreError::Config(format!("dataset {dataset_id} is not registered in the model")))
    }

    /// Names of every tensor used to encode dataset `idx`.
    pub fn encoder_param_names(&self, idx: usize) -> Vec<String> {
        let slot = &self.datasets[idx];
        self.tensor_specs(slot)
            .into_iter()
            .map(|t| t.0)
            .filter(|n| !n.starts_with("decoder/"))
            .collect()
    }

    pub fn decoder_param_names(&self, idx: usize) -> Vec<String> {
        let slot = &self.datasets[idx];
        self.tensor_specs(slot)
            .into_iter()
            .map(|t| t.0)
            .filter(|n| n.starts_with("decoder/"))
            .collect()
    }

    pub fn is_decoder_param(name: &str) -> bool {
        name.starts_with("decoder/")
    }

    /// Records the encoder forward pass of dataset `idx` on `tape`.
    pub fn encode(&self, tape: &mut Tape, binder: &mut Binder, idx: usize, graph: &GraphInput) -> Result<Var> {
        let slot = self
            .datasets
            .get(idx)
            .ok_or_else(|| CoreError::Config(format!("dataset index {idx} is not registered")))?;
        if graph.features.ncols() != slot.input_dim {
            return Err(CoreError::Data(format!(
                "dataset {}: {} feature columns, model expects {}",
                slot.meta.dataset_id,
                graph.features.ncols(),
                slot.input_dim
            )));
        }
        let id = &slot.meta.dataset_id;
        let x = tape.constant(graph.features.clone())?;
        let w = binder.get(tape, &format!("input/{id}/w"))?;
        let b = binder.get(tape, &format!("input/{id}/b"))?;
        let mut h = layers::affine(tape, x, w, b)?;
        let n_layers = self.config.n_layers();
        for layer in 0..n_layers {
            let prefix = self.layer_prefix(slot, layer);
            h = transformer_conv(tape, binder, &prefix, h, graph, self.config.heads, layer + 1 == n_layers)?.output;
        }
        Ok(h)
    }

    pub fn decode(&self, tape: &mut Tape, binder: &mut Binder, idx: usize, e: Var) -> Result<Var> {
        let id = &self.datasets[idx].meta.dataset_id;
        decode(tape, binder, &format!("decoder/{id}"), e)
    }

    /// Embedding matrix (nodes × embed_dim) for one graph.
    pub fn embed(&self, idx: usize, graph: &GraphInput) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let e = self.encode(&mut tape, &mut binder, idx, graph)?;
        Ok(tape.value(e).clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            datasets: self.datasets.clone(),
            tensors: self
                .params
                .iter()
                .map(|(n, v)| TensorEntry {
                    name: n.to_string(),
                    rows: v.nrows(),
                    cols: v.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        encode_framed(&json, self.params.iter().flat_map(|(_, v)| v.iter().copied().collect::<Vec<_>>()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ctx = "checkpoint";
        let (header, payload) = decode_framed(bytes)?;
        let header: CheckpointHeader =
            serde_json::from_slice(header).map_err(|e| CoreError::parse(ctx, e.to_string()))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(CoreError::parse(ctx, format!("unknown format {:?}", header.format)));
        }
        header.config.validate()?;
        let mut offset = 0usize;
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let n = t
                .rows
                .checked_mul(t.cols)
                .ok_or_else(|| CoreError::parse(ctx, format!("tensor {} is too large", t.name)))?;
            let end = offset
                .checked_add(n)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| CoreError::parse(ctx, "payload shorter than the manifest"))?;
            if payload[offset..end].iter().any(|v| !v.is_finite()) {
                return Err(CoreError::parse(ctx, format!("tensor {} has non-finite values", t.name)));
            }
            let value = Array2::from_shape_vec((t.rows, t.cols), payload[offset..end].to_vec())
                .map_err(|e| CoreError::parse(ctx, e.to_string()))?;
            if params.contains(&t.name) {
                return Err(CoreError::parse(ctx, format!("duplicate tensor {}", t.name)));
            }
            params.insert(t.name.clone(), value);
            offset = end;
        }
        if offset != payload.len() {
            return Err(CoreError::parse(ctx, "payload longer than the manifest"));
        }
        let model = Self {
            config: header.config,
            datasets: header.datasets,
            params,
        };
        // Every tensor the architecture needs must be present with the right shape.
        for slot in &model.datasets {
            for (name, shape, _) in model.tensor_specs(slot) {
                match model.params.get(&name) {
                    Some(v) if v.dim() == shape => {}
                    _ => return Err(CoreError::parse(ctx, format!("missing or misshapen tensor {name}"))),
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

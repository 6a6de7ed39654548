//! Loss components, the optimizer and the epoch loop.

mod adam;
mod losses;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use musegnn_autodiff::Tape;
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{AnchorSet, GeneGraph};
use crate::model::{Binder, DatasetSlot, GraphInput, Model, ModelConfig};
use crate::{CoreError, Result};

pub use adam::{Adam, Moments};
pub use losses::{bce_loss, infonce_loss, weighted_cosine, BCE_CLAMP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub epochs: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lambda_contrastive: f64,
    pub embed_dim: usize,
    pub sample_size: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub sim_loss: bool,
    pub infonce_loss: bool,
    pub weight_sharing: bool,
    pub shuffle_features: bool,
    pub hidden_dim: usize,
    pub heads: usize,
    pub dataset_layers: usize,
    pub shared_layers: usize,
    pub decoder_hidden: usize,
    /// Checkpoint interval in epochs for callers that persist models; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            epochs: 2000,
            lr_encoder: 1e-4,
            lr_decoder: 1e-3,
            lambda_contrastive: 1e-2,
            embed_dim: m.embed_dim,
            sample_size: 100,
            tau: 0.07,
            batch_size: 2000,
            seed: 0,
            sim_loss: true,
            infonce_loss: true,
            weight_sharing: true,
            shuffle_features: false,
            hidden_dim: m.hidden_dim,
            heads: m.heads,
            dataset_layers: m.dataset_layers,
            shared_layers: m.shared_layers,
            decoder_hidden: m.decoder_hidden,
            checkpoint_every: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(self.lr_encoder > 0.0 && self.lr_decoder > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("temperature must be positive");
        }
        if self.sample_size == 0 {
            return bad("contrastive sample size must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("node batch size must be at least 2");
        }
        if !(self.lambda_contrastive >= 0.0 && self.lambda_contrastive.is_finite()) {
            return bad("contrastive weight must be finite and non-negative");
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            heads: self.heads,
            dataset_layers: self.dataset_layers,
            shared_layers: self.shared_layers,
            decoder_hidden: self.decoder_hidden,
            edge_dim: 0,
            weight_sharing: self.weight_sharing,
        }
    }
}

/// Uniform draw of a partner graph other than `i`; `None` with fewer than
/// two graphs.
pub fn sample_pair(i: usize, n_graphs: usize, rng: &mut impl Rng) -> Option<usize> {
    if n_graphs < 2 || i >= n_graphs {
        return None;
    }
    let j = rng.random_range(0..n_graphs - 1);
    Some(if j >= i { j + 1 } else { j })
}

/// Sampled contrastive queries for one graph pair: node indices in each
/// graph with one same-graph neighbor per query as its positive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContrastiveBatch {
    pub queries_i: Vec<usize>,
    pub positives_i: Vec<usize>,
    pub queries_j: Vec<usize>,
    pub positives_j: Vec<usize>,
}

/// Up to `size` difference genes per side, restricted to genes with at least
/// one neighbor, each paired with a uniformly drawn neighbor.
pub fn sample_contrastive(anchors: &AnchorSet, size: usize, rng: &mut impl Rng) -> ContrastiveBatch {
    let mut side = |diff: &[usize], nbrs: &[Vec<usize>]| {
        let eligible: Vec<usize> = (0..diff.len()).filter(|&k| !nbrs[k].is_empty()).collect();
        let mut picked: Vec<usize> = eligible.choose_multiple(rng, size.min(eligible.len())).copied().collect();
        picked.sort_unstable();
        let queries: Vec<usize> = picked.iter().map(|&k| diff[k]).collect();
        let positives: Vec<usize> = picked.iter().map(|&k| *nbrs[k].choose(rng).expect("non-empty")).collect();
        (queries, positives)
    };
    let (queries_i, positives_i) = side(&anchors.diff_i, &anchors.diff_neighbors_i);
    let (queries_j, positives_j) = side(&anchors.diff_j, &anchors.diff_neighbors_j);
    ContrastiveBatch {
        queries_i,
        positives_i,
        queries_j,
        positives_j,
    }
}

/// One training example: dataset `i`, its reconstruction target, and an
/// optional partner graph with anchors and contrastive samples.
pub struct StepInput<'a> {
    pub dataset: usize,
    pub graph: &'a GraphInput,
    pub target: &'a Array2<f64>,
    pub partner: Option<PartnerInput<'a>>,
}

pub struct PartnerInput<'a> {
    pub dataset: usize,
    pub graph: &'a GraphInput,
    pub anchors: &'a AnchorSet,
    pub contrastive: ContrastiveBatch,
}

/// Loss component values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub bce: f64,
    pub sim: f64,
    pub infonce: f64,
    pub total: f64,
}

/// Records the full objective `bce - sim + lambda_c * infonce` on `tape`.
pub fn record_loss(
    tape: &mut Tape,
    binder: &mut Binder,
    model: &Model,
    step: &StepInput,
    hp: &Hyperparams,
) -> Result<(musegnn_autodiff::Var, LossParts)> {
    let ei = model.encode(tape, binder, step.dataset, step.graph)?;
    let rec = model.decode(tape, binder, step.dataset, ei)?;
    let bce = bce_loss(tape, rec, step.target)?;
    let mut total = bce;
    let mut parts = LossParts {
        bce: tape.item(bce),
        sim: 0.0,
        infonce: 0.0,
        total: 0.0,
    };
    if let Some(pair) = step.partner.as_ref().filter(|_| hp.sim_loss || hp.infonce_loss) {
        let ej = model.encode(tape, binder, pair.dataset, pair.graph)?;
        if hp.sim_loss {
            let (pairs, lambda) = (&pair.anchors.common, &pair.anchors.lambda);
            let sim = weighted_cosine(tape, ei, ej, pairs, lambda)?;
            parts.sim = tape.item(sim);
            total = tape.sub(total, sim)?;
        }
        if hp.infonce_loss {
            if let Some(nce) = contrastive_term(tape, ei, ej, &pair.contrastive, hp.tau)? {
                parts.infonce = tape.item(nce);
                let weighted = tape.scale(nce, hp.lambda_contrastive)?;
                total = tape.add(total, weighted)?;
            }
        }
    }
    parts.total = tape.item(total);
    Ok((total, parts))
}

/// Count-weighted mean of the two directional contrastive losses. Rows with
/// zero-norm embeddings are dropped; `None` when nothing usable remains.
fn contrastive_term(
    tape: &mut Tape,
    ei: musegnn_autodiff::Var,
    ej: musegnn_autodiff::Var,
    batch: &ContrastiveBatch,
    tau: f64,
) -> Result<Option<musegnn_autodiff::Var>> {
    let usable = |tape: &Tape, e, qs: &[usize], ps: &[usize]| -> (Vec<usize>, Vec<usize>) {
        let nz = |r: usize| tape.value(e).row(r).iter().any(|&x: &f64| x != 0.0);
        qs.iter().zip(ps).filter(|(&q, &p)| nz(q) && nz(p)).map(|(&q, &p)| (q, p)).unzip()
    };
    let (qi, pi) = usable(tape, ei, &batch.queries_i, &batch.positives_i);
    let (qj, pj) = usable(tape, ej, &batch.queries_j, &batch.positives_j);
    let mut terms = Vec::new();
    for (own, q, p, other, oq, op) in [(ei, &qi, &pi, ej, &qj, &pj), (ej, &qj, &pj, ei, &qi, &pi)] {
        if q.is_empty() || oq.is_empty() {
            continue;
        }
        let queries = tape.gather_rows(own, q)?;
        let positives = tape.gather_rows(own, p)?;
        let neg_rows: Vec<usize> = oq.iter().chain(op.iter()).copied().collect();
        let negatives = tape.gather_rows(other, &neg_rows)?;
        let loss = infonce_loss(tape, queries, positives, negatives, tau)?;
        terms.push((loss, q.len()));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let n: usize = terms.iter().map(|t| t.1).sum();
    let mut acc = None;
    for (loss, count) in terms {
        let w = tape.scale(loss, count as f64 / n as f64)?;
        acc = Some(match acc {
            None => w,
            Some(a) => tape.add(a, w)?,
        });
    }
    Ok(acc)
}

/// Reconstruction target: adjacency with self-loops.
pub fn reconstruction_target(graph: &GraphInput) -> Array2<f64> {
    let n = graph.n_nodes();
    let mut t = Array2::zeros((n, n));
    for (&s, &d) in graph.src.iter().zip(&graph.dst) {
        t[[d, s]] = 1.0;
    }
    t
}

/// Node features used for training: every node gets the mean feature row
/// when `shuffle_features` is on.
pub fn training_features(g: &GeneGraph, hp: &Hyperparams) -> Array2<f64> {
    if !hp.shuffle_features || g.n_nodes() == 0 {
        return g.features.clone();
    }
    let mean = g.features.mean_axis(ndarray::Axis(0)).expect("non-empty");
    Array2::from_shape_fn(g.features.dim(), |(_, c)| mean[c])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub dataset: String,
    #[serde(flatten)]
    pub parts: LossParts,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,dataset,bce,sim,infonce,total";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let p = &r.parts;
            writeln!(out, "{},{},{},{},{},{}", r.epoch, r.dataset, p.bce, p.sim, p.infonce, p.total).expect("string write");
        }
        out
    }

    /// Sum of every dataset's total loss in one epoch.
    pub fn epoch_total(&self, epoch: usize) -> f64 {
        self.rows.iter().filter(|r| r.epoch == epoch).map(|r| r.parts.total).sum()
    }
}

pub struct TrainOutput {
    pub model: Model,
    /// Final embeddings per graph, in input order.
    pub embeddings: Vec<Array2<f64>>,
    pub log: TrainLog,
    pub wall_seconds: f64,
}

struct Prepared {
    full: GraphInput,
    target: Array2<f64>,
    graph: GeneGraph,
}

fn prepare(g: &GeneGraph, hp: &Hyperparams) -> Result<Prepared> {
    let mut graph = g.clone();
    graph.features = training_features(g, hp);
    let full = GraphInput::from_graph(&graph)?;
    let target = reconstruction_target(&full);
    Ok(Prepared { full, target, graph })
}

/// Induced subgraph on `batch` uniformly drawn nodes when the graph is larger
/// than the batch; `None` otherwise.
fn node_batch(p: &Prepared, batch: usize, rng: &mut impl Rng) -> Result<Option<(Vec<usize>, GraphInput, Array2<f64>)>> {
    let n = p.graph.n_nodes();
    if n <= batch {
        return Ok(None);
    }
    let mut keep: Vec<usize> = rand::seq::index::sample(rng, n, batch).into_vec();
    keep.sort_unstable();
    let sub = p.graph.induced(&keep)?;
    let input = GraphInput::from_graph(&sub)?;
    let target = reconstruction_target(&input);
    Ok(Some((keep, input, target)))
}

pub fn train(graphs: &[GeneGraph], anchors: &BTreeMap<(usize, usize), AnchorSet>, hp: &Hyperparams) -> Result<TrainOutput> {
    train_with_callback(graphs, anchors, hp, |_, _| Ok(()))
}

/// Trains from a fresh initialization; `on_epoch(epoch, model)` runs after
/// every completed epoch (1-based).
pub fn train_with_callback(
    graphs: &[GeneGraph],
    anchors: &BTreeMap<(usize, usize), AnchorSet>,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<TrainOutput> {
    hp.validate()?;
    if graphs.is_empty() {
        return Err(CoreError::Data("no graphs to train on".into()));
    }
    let start = Instant::now();
    let slots: Vec<DatasetSlot> = graphs
        .iter()
        .map(|g| DatasetSlot {
            meta: g.meta.clone(),
            input_dim: g.features.ncols(),
        })
        .collect();
    let mut model = Model::init(slots, hp.model_config(), hp.seed)?;
    let prepared: Vec<Prepared> = graphs.iter().map(|g| prepare(g, hp)).collect::<Result<_>>()?;
    if graphs.len() < 2 && (hp.sim_loss || hp.infonce_loss) {
        log::warn!("single graph: similarity and contrastive terms are skipped");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut adam = Adam::default();
    let mut log = TrainLog::default();

    for epoch in 1..=hp.epochs {
        for i in 0..graphs.len() {
            let id = &graphs[i].meta.dataset_id;
            let parts = train_step(&mut model, &mut adam, &prepared, anchors, i, hp, &mut rng)
                .map_err(|e| CoreError::Numeric(format!("epoch {epoch}, dataset {id}: {e}")))?;
            if !parts.total.is_finite() {
                return Err(CoreError::Numeric(format!("epoch {epoch}, dataset {id}: loss is not finite")));
            }
            log.rows.push(LogRow {
                epoch,
                dataset: id.clone(),
                parts,
            });
        }
        log::debug!("epoch {epoch}: total {}", log.epoch_total(epoch));
        on_epoch(epoch, &model)?;
    }

    let embeddings = prepared
        .iter()
        .enumerate()
        .map(|(i, p)| model.embed(i, &p.full))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutput {
        model,
        embeddings,
        log,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    prepared: &[Prepared],
    anchors: &BTreeMap<(usize, usize), AnchorSet>,
    i: usize,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<LossParts> {
    let wants_pair = hp.sim_loss || hp.infonce_loss;
    let partner = if wants_pair { sample_pair(i, prepared.len(), rng) } else { None };
    let batch_i = node_batch(&prepared[i], hp.batch_size, rng)?;
    let batch_j = match partner {
        Some(j) => node_batch(&prepared[j], hp.batch_size, rng)?,
        None => None,
    };
    let (graph_i, target_i) = match &batch_i {
        Some((_, g, t)) => (g, t),
        None => (&prepared[i].full, &prepared[i].target),
    };
    let restricted;
    let partner_input = match partner {
        Some(j) => {
            let base = anchors
                .get(&(i, j))
                .ok_or_else(|| CoreError::Data(format!("no anchor set for graphs {i} and {j}")))?;
            let anchor_ref = if batch_i.is_some() || batch_j.is_some() {
                let all = |n: usize| (0..n).collect::<Vec<_>>();
                let keep_i = batch_i.as_ref().map(|b| b.0.clone()).unwrap_or_else(|| all(prepared[i].graph.n_nodes()));
                let keep_j = batch_j.as_ref().map(|b| b.0.clone()).unwrap_or_else(|| all(prepared[j].graph.n_nodes()));
                restricted = base.restrict(&keep_i, &keep_j);
                &restricted
            } else {
                base
            };
            let contrastive = if hp.infonce_loss {
                sample_contrastive(anchor_ref, hp.sample_size, rng)
            } else {
                ContrastiveBatch::default()
            };
            Some(PartnerInput {
                dataset: j,
                graph: batch_j.as_ref().map(|b| &b.1).unwrap_or(&prepared[j].full),
                anchors: anchor_ref,
                contrastive,
            })
        }
        None => None,
    };
    let step = StepInput {
        dataset: i,
        graph: graph_i,
        target: target_i,
        partner: partner_input,
    };

    let mut tape = Tape::new();
    let (loss, parts, bound) = {
        let mut binder = Binder::new(&model.params);
        let (loss, parts) = record_loss(&mut tape, &mut binder, model, &step, hp)?;
        (loss, parts, binder.bound().clone())
    };
    let grads = tape.backward(loss)?;
    for (name, var) in bound {
        let lr = if Model::is_decoder_param(&name) { hp.lr_decoder } else { hp.lr_encoder };
        let g = grads.get(var);
        let p = model.params.get_mut(&name).expect("bound parameters exist");
        adam.step(&name, p, &g, lr);
    }
    Ok(parts)
}

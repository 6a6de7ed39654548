use musegnn_autodiff::{Segments, Tape, Var};
use ndarray::Array2;

use super::params::Binder;
use crate::graph::GeneGraph;
use crate::{CoreError, Result};

pub const GRAPHNORM_EPS: f64 = 1e-5;

/// Message-passing structure of one graph: every undirected edge in both
/// directions plus one self-loop per node, sorted by target node.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub features: Array2<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub segments: Segments,
    /// Optional per-message features aligned with `src`/`dst`.
    pub edge_features: Option<Array2<f64>>,
}

impl GraphInput {
    pub fn new(features: Array2<f64>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = features.nrows();
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(2 * edges.len() + n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(CoreError::Data(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            if a != b {
                pairs.push((b, a));
                pairs.push((a, b));
            }
        }
        pairs.extend((0..n).map(|i| (i, i)));
        pairs.sort_unstable();
        pairs.dedup();
        let dst: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let src: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let segments = Segments::from_sorted_ids(&dst, n)?;
        Ok(Self {
            features,
            src,
            dst,
            segments,
            edge_features: None,
        })
    }

    pub fn from_graph(g: &GeneGraph) -> Result<Self> {
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.a, e.b)).collect();
        Self::new(g.features.clone(), &edges)
    }

    pub fn with_edge_features(mut self, f: Array2<f64>) -> Result<Self> {
        if f.nrows() != self.src.len() {
            return Err(CoreError::Data(format!(
                "{} edge feature rows for {} messages",
                f.nrows(),
                self.src.len()
            )));
        }
        self.edge_features = Some(f);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_messages(&self) -> usize {
        self.src.len()
    }
}

/// `cols × heads` indicator summing each head's block of columns.
fn head_blocks(cols: usize, heads: usize) -> Array2<f64> {
    let d = cols / heads;
    Array2::from_shape_fn((cols, heads), |(c, h)| if c / d == h { 1.0 } else { 0.0 })
}

pub(crate) fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add_row(xw, b)?)
}

/// Output of one attention layer; `attention` is messages × heads.
pub struct LayerTrace {
    pub output: Var,
    pub attention: Var,
}

pub fn transformer_conv(
    tape: &mut Tape,
    params: &mut Binder,
    prefix: &str,
    h: Var,
    graph: &GraphInput,
    heads: usize,
    last: bool,
) -> Result<LayerTrace> {
    let mut p = |tape: &mut Tape, n: &str| params.get(tape, &format!("{prefix}/{n}"));
    let wq = p(tape, "wq")?;
    let (din, dout) = tape.shape(wq);
    if tape.shape(h).1 != din {
        return Err(CoreError::Config(format!(
            "{prefix}: input width {} but layer expects {din}",
            tape.shape(h).1
        )));
    }
    let (bq, wk, bk, wv, bv) = (p(tape, "bq")?, p(tape, "wk")?, p(tape, "bk")?, p(tape, "wv")?, p(tape, "bv")?);
    let q = affine(tape, h, wq, bq)?;
    let k = affine(tape, h, wk, bk)?;
    let v = affine(tape, h, wv, bv)?;
    let qe = tape.gather_rows(q, &graph.dst)?;
    let mut ke = tape.gather_rows(k, &graph.src)?;
    let mut ve = tape.gather_rows(v, &graph.src)?;
    if let Some(ef) = &graph.edge_features {
        let (we, be) = (p(tape, "we")?, p(tape, "be")?);
        let ef = tape.constant(ef.clone())?;
        let e = affine(tape, ef, we, be)?;
        ke = tape.add(ke, e)?;
        ve = tape.add(ve, e)?;
    }

    let d = dout / heads;
    let blocks = head_blocks(dout, heads);
    let sum_heads = tape.constant(blocks.clone())?;
    let spread = tape.constant(blocks.reversed_axes())?;
    let prod = tape.mul(qe, ke)?;
    let scores = tape.matmul(prod, sum_heads)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let attention = tape.segment_softmax(scores, &graph.segments)?;
    let weights = tape.matmul(attention, spread)?;
    let messages = tape.mul(weights, ve)?;
    let agg = tape.segment_sum(messages, &graph.segments)?;

    let skip = if din == dout {
        h
    } else {
        let w = p(tape, "skip")?;
        tape.matmul(h, w)?
    };
    let out = tape.add(agg, skip)?;
    if last {
        return Ok(LayerTrace { output: out, attention });
    }
    let alpha = p(tape, "norm_alpha")?;
    let gamma = p(tape, "norm_gamma")?;
    let beta = p(tape, "norm_beta")?;
    let normed = graph_norm(tape, out, alpha, gamma, beta)?;
    Ok(LayerTrace {
        output: tape.mish(normed)?,
        attention,
    })
}

/// Per-column normalization over the nodes of one graph with a learnable
/// fraction `alpha` of the mean removed.
pub fn graph_norm(tape: &mut Tape, x: Var, alpha: Var, gamma: Var, beta: Var) -> Result<Var> {
    let mu = tape.mean_rows(x)?;
    let shift = tape.mul(mu, alpha)?;
    let shift = tape.neg(shift)?;
    let centered = tape.add_row(x, shift)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_rows(sq)?;
    let var = tape.add_scalar(var, GRAPHNORM_EPS)?;
    let sd = tape.sqrt(var)?;
    let ones = tape.constant(Array2::ones(tape.shape(sd)))?;
    let inv = tape.div(ones, sd)?;
    let normed = tape.mul_row(centered, inv)?;
    let scaled = tape.mul_row(normed, gamma)?;
    Ok(tape.add_row(scaled, beta)?)
}

/// Elementwise scalar MLP with a sigmoid output applied to the Gram matrix
/// of `e`.
pub fn decode(tape: &mut Tape, params: &mut Binder, prefix: &str, e: Var) -> Result<Var> {
    let p = tape.shape(e).0;
    let et = tape.transpose(e)?;
    let gram = tape.matmul(e, et)?;
    let flat = tape.reshape(gram, p * p, 1)?;
    let w1 = params.get(tape, &format!("{prefix}/w1"))?;
    let b1 = params.get(tape, &format!("{prefix}/b1"))?;
    let w2 = params.get(tape, &format!("{prefix}/w2"))?;
    let b2 = params.get(tape, &format!("{prefix}/b2"))?;
    let hidden = affine(tape, flat, w1, b1)?;
    let hidden = tape.tanh(hidden)?;
    let out = affine(tape, hidden, w2, b2)?;
    let out = tape.sigmoid(out)?;
    Ok(tape.reshape(out, p, p)?)
}

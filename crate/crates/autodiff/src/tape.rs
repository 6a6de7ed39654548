use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::Serialize;

use crate::{AdError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row segments described by offsets: segment `s` spans rows
/// `offsets[s]..offsets[s + 1]`. Empty segments are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Arc<[usize]>,
}

impl Segments {
    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self> {
        if offsets.is_empty() || offsets[0] != 0 {
            return Err(AdError::Segments("offsets must start at 0".into()));
        }
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(AdError::Segments("offsets must be non-decreasing".into()));
        }
        Ok(Self {
            offsets: offsets.into(),
        })
    }

    /// Build segments from a sorted list of segment ids (one per row).
    pub fn from_sorted_ids(ids: &[usize], n_segments: usize) -> Result<Self> {
        let mut offsets = vec![0usize; n_segments + 1];
        let mut prev = 0usize;
        for &id in ids {
            if id >= n_segments {
                return Err(AdError::IndexOutOfRange {
                    index: id,
                    len: n_segments,
                });
            }
            if id < prev {
                return Err(AdError::Segments("segment ids must be sorted".into()));
            }
            prev = id;
            offsets[id + 1] += 1;
        }
        for s in 0..n_segments {
            offsets[s + 1] += offsets[s];
        }
        Self::from_offsets(offsets)
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Softplus(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    SumCols(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Segments),
    SegmentSum(Var, Segments),
    L2NormalizeRows(Var),
    Transpose(Var),
    Reshape(Var),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sqrt(..) => "sqrt",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::MeanRows(..) => "mean_rows",
            Op::SumCols(..) => "sum_cols",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::SegmentSum(..) => "segment_sum",
            Op::L2NormalizeRows(..) => "l2_normalize_rows",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
        }
    }

    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Sqrt(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::MeanRows(a)
            | Op::SumCols(a)
            | Op::SliceCols(a, ..)
            | Op::GatherRows(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::SegmentSum(a, _)
            | Op::L2NormalizeRows(a)
            | Op::Transpose(a)
            | Op::Reshape(a) => vec![*a],
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Array2<f64>,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Records operations for a single forward/backward pass.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Nodes that did not
    /// influence the loss get an all-zero matrix of the right shape.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Serialize)]
struct DumpEntry {
    id: usize,
    op: &'static str,
    parents: Vec<usize>,
    shape: (usize, usize),
    requires_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Result<Var> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(AdError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub(crate) fn push(&mut self, value: Array2<f64>, op: Op) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Op list as JSON, for debugging.
    pub fn dump_json(&self) -> String {
        let entries: Vec<DumpEntry> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| DumpEntry {
                id,
                op: n.op.name(),
                parents: n.op.parents().iter().map(|p| p.0).collect(),
                shape: n.value.dim(),
                requires_grad: matches!(n.op, Op::Leaf) && n.needs_grad,
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("tape dump serializes")
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(AdError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AdError::NonScalarLoss(shape));
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            for p in node.op.parents() {
                // Parents are always recorded before their children.
                assert!(p.0 < id, "tape is not topologically ordered");
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(delta.dim(), self.nodes[v.0].value.dim());
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g.dot(&val(b).t());
                let gb = val(a).t().dot(g);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g * val(b));
                self.accumulate(grads, *b, g * val(a));
            }
            Op::Div(a, b) => {
                let bv = val(b);
                self.accumulate(grads, *a, g / bv);
                let gb = -(g * y) / bv;
                self.accumulate(grads, *b, gb);
            }
            Op::Neg(a) => self.accumulate(grads, *a, -g),
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Exp(a) => self.accumulate(grads, *a, g * y),
            Op::Log(a) => self.accumulate(grads, *a, g / val(a)),
            Op::Tanh(a) => {
                let d = y.mapv(|t| 1.0 - t * t);
                self.accumulate(grads, *a, g * &d);
            }
            Op::Softplus(a) => {
                let d = val(a).mapv(crate::ops::sigmoid);
                self.accumulate(grads, *a, g * &d);
            }
            Op::Sigmoid(a) => {
                let d = y.mapv(|s| s * (1.0 - s));
                self.accumulate(grads, *a, g * &d);
            }
            Op::Sqrt(a) => {
                let d = y.mapv(|s| 0.5 / s);
                self.accumulate(grads, *a, g * &d);
            }
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(val(a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0;
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let s = g[[0, 0]];
                self.accumulate(grads, *a, Array2::from_elem(val(a).dim(), s));
            }
            Op::Mean(a) => {
                let av = val(a);
                let s = g[[0, 0]] / av.len() as f64;
                self.accumulate(grads, *a, Array2::from_elem(av.dim(), s));
            }
            Op::SumRows(a) => {
                let d = g.broadcast(val(a).dim()).unwrap().to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let (r, _) = val(a).dim();
                let d = g.broadcast(val(a).dim()).unwrap().to_owned() / r as f64;
                self.accumulate(grads, *a, d);
            }
            Op::SumCols(a) => {
                let d = g.broadcast(val(a).dim()).unwrap().to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, *r, gr);
            }
            Op::MulRow(a, r) => {
                let rv = val(r);
                self.accumulate(grads, *a, g * rv);
                let gr = (g * val(a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, *r, gr);
            }
            Op::MulCol(a, c) => {
                let cv = val(c);
                self.accumulate(grads, *a, g * cv);
                let gc = (g * val(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                self.accumulate(grads, *c, gc);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(p).ncols();
                    let d = g.slice(ndarray::s![.., start..start + w]).to_owned();
                    self.accumulate(grads, *p, d);
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = val(p).nrows();
                    let d = g.slice(ndarray::s![start..start + h, ..]).to_owned();
                    self.accumulate(grads, *p, d);
                    start += h;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(val(a).dim());
                d.slice_mut(ndarray::s![.., *start..*end]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(val(a).dim());
                for (row, &src) in idx.iter().enumerate() {
                    let mut target = d.row_mut(src);
                    target += &g.row(row);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSoftmax(a, segs) => {
                let mut d = Array2::zeros(y.dim());
                for s in 0..segs.len() {
                    let r = segs.range(s);
                    for c in 0..y.ncols() {
                        let dot: f64 = r.clone().map(|i| y[[i, c]] * g[[i, c]]).sum();
                        for i in r.clone() {
                            d[[i, c]] = y[[i, c]] * (g[[i, c]] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSum(a, segs) => {
                let mut d = Array2::zeros(val(a).dim());
                for s in 0..segs.len() {
                    for i in segs.range(s) {
                        d.row_mut(i).assign(&g.row(s));
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::L2NormalizeRows(a) => {
                let x = val(a);
                let mut d = Array2::zeros(x.dim());
                for i in 0..x.nrows() {
                    let norm = x.row(i).dot(&x.row(i)).sqrt();
                    let yg = y.row(i).dot(&g.row(i));
                    for c in 0..x.ncols() {
                        d[[i, c]] = (g[[i, c]] - y[[i, c]] * yg) / norm;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Reshape(a) => {
                let shape = val(a).dim();
                let flat: Vec<f64> = g.iter().copied().collect();
                let d = Array2::from_shape_vec(shape, flat).expect("reshape size preserved");
                self.accumulate(grads, *a, d);
            }
        }
    }
}

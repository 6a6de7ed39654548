use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};

use crate::tape::{Op, Segments, Tape, Var};
use crate::{AdError, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn same_shape(t: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (t.shape(a), t.shape(b));
    if sa != sb {
        return Err(AdError::ShapeMismatch {
            op,
            lhs: sa,
            rhs: sb,
        });
    }
    Ok(())
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "div", a, b)?;
        if self.value(b).iter().any(|&x| x == 0.0) {
            return Err(AdError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = -self.value(a);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= 0.0) {
            return Err(AdError::Domain {
                op: "log",
                detail: "non-positive input".into(),
            });
        }
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// ln(1 + e^x), evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= 0.0) {
            return Err(AdError::Domain {
                op: "sqrt",
                detail: "non-positive input".into(),
            });
        }
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    /// Clip into `[lo, hi]`; the gradient is zero where clipping was active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// x · tanh(softplus(x)).
    pub fn mish(&mut self, a: Var) -> Result<Var> {
        let sp = self.softplus(a)?;
        let th = self.tanh(sp)?;
        self.mul(a, th)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(AdError::Domain {
                op: "mean",
                detail: "empty input".into(),
            });
        }
        let v = Array2::from_elem((1, 1), self.value(a).sum() / n as f64);
        self.push(v, Op::Mean(a))
    }

    /// Column sums: (n × c) → (1 × c).
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(a))
    }

    /// Column means: (n × c) → (1 × c).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).nrows();
        if n == 0 {
            return Err(AdError::Domain {
                op: "mean_rows",
                detail: "no rows".into(),
            });
        }
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0)) / n as f64;
        self.push(v, Op::MeanRows(a))
    }

    /// Row sums: (n × c) → (n × 1).
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    /// Adds a 1×c row vector to every row of an n×c matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AdError::ShapeMismatch {
                op: "add_row",
                lhs: sa,
                rhs: sr,
            });
        }
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of an n×c matrix elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AdError::ShapeMismatch {
                op: "mul_row",
                lhs: sa,
                rhs: sr,
            });
        }
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// Multiplies every column of an n×c matrix elementwise by an n×1 column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(AdError::ShapeMismatch {
                op: "mul_col",
                lhs: sa,
                rhs: sc,
            });
        }
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.concat_check(parts, 0, "concat_cols")?;
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = if views.is_empty() {
            Array2::zeros((rows, 0))
        } else {
            concatenate(Axis(1), &views).expect("rows checked")
        };
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.concat_check(parts, 1, "concat_rows")?;
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = if views.is_empty() {
            Array2::zeros((0, cols))
        } else {
            concatenate(Axis(0), &views).expect("cols checked")
        };
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    fn concat_check(&self, parts: &[Var], axis: usize, op: &'static str) -> Result<usize> {
        let Some(first) = parts.first() else {
            return Err(AdError::Domain {
                op,
                detail: "nothing to concatenate".into(),
            });
        };
        let s0 = self.shape(*first);
        let pick = |s: (usize, usize)| if axis == 0 { s.0 } else { s.1 };
        for p in parts {
            let s = self.shape(*p);
            if pick(s) != pick(s0) {
                return Err(AdError::ShapeMismatch { op, lhs: s0, rhs: s });
            }
        }
        Ok(pick(s0))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s.1 {
            return Err(AdError::Domain {
                op: "slice_cols",
                detail: format!("range {start}..{end} outside {} columns", s.1),
            });
        }
        let v = self.value(a).slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Row `r` of the output is row `idx[r]` of `a`. Indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let n = src.nrows();
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            if i >= n {
                return Err(AdError::IndexOutOfRange { index: i, len: n });
            }
            v.row_mut(r).assign(&src.row(i));
        }
        let idx: Arc<[usize]> = idx.into();
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Softmax over the rows of each segment, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segs: &Segments) -> Result<Var> {
        let x = self.value(a);
        if segs.total_rows() != x.nrows() {
            return Err(AdError::Segments(format!(
                "segments cover {} rows, input has {}",
                segs.total_rows(),
                x.nrows()
            )));
        }
        let mut v = Array2::zeros(x.dim());
        for s in 0..segs.len() {
            let r = segs.range(s);
            if r.is_empty() {
                continue;
            }
            for c in 0..x.ncols() {
                let max = r
                    .clone()
                    .map(|i| x[[i, c]])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in r.clone() {
                    let e = (x[[i, c]] - max).exp();
                    v[[i, c]] = e;
                    z += e;
                }
                for i in r.clone() {
                    v[[i, c]] /= z;
                }
            }
        }
        self.push(v, Op::SegmentSoftmax(a, segs.clone()))
    }

    /// Sums the rows of each segment: (total_rows × c) → (n_segments × c).
    pub fn segment_sum(&mut self, a: Var, segs: &Segments) -> Result<Var> {
        let x = self.value(a);
        if segs.total_rows() != x.nrows() {
            return Err(AdError::Segments(format!(
                "segments cover {} rows, input has {}",
                segs.total_rows(),
                x.nrows()
            )));
        }
        let mut v = Array2::zeros((segs.len(), x.ncols()));
        for s in 0..segs.len() {
            let mut out = v.row_mut(s);
            for i in segs.range(s) {
                out += &x.row(i);
            }
        }
        self.push(v, Op::SegmentSum(a, segs.clone()))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = x.clone();
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(AdError::Domain {
                    op: "l2_normalize_rows",
                    detail: format!("row {i} has zero norm"),
                });
            }
            row /= norm;
        }
        self.push(v, Op::L2NormalizeRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.0 * s.1 != rows * cols {
            return Err(AdError::ShapeMismatch {
                op: "reshape",
                lhs: s,
                rhs: (rows, cols),
            });
        }
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("size checked");
        self.push(v, Op::Reshape(a))
    }
}

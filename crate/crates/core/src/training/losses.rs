use musegnn_autodiff::{Tape, Var};
use ndarray::Array2;

use crate::{CoreError, Result};

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over every entry of `pred` against `target`.
pub fn bce_loss(tape: &mut Tape, pred: Var, target: &Array2<f64>) -> Result<Var> {
    if tape.shape(pred) != target.dim() {
        return Err(CoreError::Numeric(format!(
            "reconstruction is {:?} but target is {:?}",
            tape.shape(pred),
            target.dim()
        )));
    }
    let p = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let log_p = tape.log(p)?;
    let one_minus = tape.neg(p)?;
    let one_minus = tape.add_scalar(one_minus, 1.0)?;
    let log_q = tape.log(one_minus)?;
    let t = tape.constant(target.clone())?;
    let u = tape.constant(target.mapv(|x| 1.0 - x))?;
    let a = tape.mul(t, log_p)?;
    let b = tape.mul(u, log_q)?;
    let ll = tape.add(a, b)?;
    let m = tape.mean(ll)?;
    Ok(tape.neg(m)?)
}

/// Mean over `pairs` of `lambda * cos(e_i[a], e_j[b])`. Pairs where either
/// row has zero norm, or whose weight is zero, contribute 0. The caller
/// subtracts this value from the objective.
pub fn weighted_cosine(
    tape: &mut Tape,
    ei: Var,
    ej: Var,
    pairs: &[(usize, usize)],
    lambda: &[f64],
) -> Result<Var> {
    if pairs.len() != lambda.len() {
        return Err(CoreError::Numeric("one weight per anchor pair is required".into()));
    }
    let nonzero = |v: Var, r: usize, tape: &Tape| tape.value(v).row(r).iter().any(|&x| x != 0.0);
    let mut rows_i = Vec::new();
    let mut rows_j = Vec::new();
    let mut weights = Vec::new();
    for (&(a, b), &l) in pairs.iter().zip(lambda) {
        if l != 0.0 && nonzero(ei, a, tape) && nonzero(ej, b, tape) {
            rows_i.push(a);
            rows_j.push(b);
            weights.push(l);
        }
    }
    if weights.is_empty() {
        return tape.scalar(0.0).map_err(Into::into);
    }
    let xi = tape.gather_rows(ei, &rows_i)?;
    let xj = tape.gather_rows(ej, &rows_j)?;
    let xi = tape.l2_normalize_rows(xi)?;
    let xj = tape.l2_normalize_rows(xj)?;
    let prod = tape.mul(xi, xj)?;
    let cos = tape.sum_cols(prod)?;
    let w = tape.constant(Array2::from_shape_vec((weights.len(), 1), weights).expect("column"))?;
    let weighted = tape.mul(cos, w)?;
    let total = tape.sum(weighted)?;
    Ok(tape.scale(total, 1.0 / pairs.len() as f64)?)
}

/// Contrastive loss: each query row is classified against its own positive
/// row and every row of `negatives`, using cosine similarity over `tau`.
pub fn infonce_loss(tape: &mut Tape, queries: Var, positives: Var, negatives: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(CoreError::Config(format!("temperature must be positive, got {tau}")));
    }
    let (n, d) = tape.shape(queries);
    if tape.shape(positives) != (n, d) || tape.shape(negatives).1 != d || n == 0 {
        return Err(CoreError::Numeric(format!(
            "contrastive shapes: queries {:?}, positives {:?}, negatives {:?}",
            tape.shape(queries),
            tape.shape(positives),
            tape.shape(negatives)
        )));
    }
    if tape.shape(negatives).0 == 0 {
        return Err(CoreError::Numeric("contrastive loss needs at least one negative".into()));
    }
    let q = tape.l2_normalize_rows(queries)?;
    let p = tape.l2_normalize_rows(positives)?;
    let k = tape.l2_normalize_rows(negatives)?;
    let pos = tape.mul(q, p)?;
    let pos = tape.sum_cols(pos)?;
    let pos = tape.scale(pos, 1.0 / tau)?;
    let kt = tape.transpose(k)?;
    let neg = tape.matmul(q, kt)?;
    let neg = tape.scale(neg, 1.0 / tau)?;
    let logits = tape.concat_cols(&[pos, neg])?;
    // Row-wise max shift for a stable log-sum-exp; the shift is a constant.
    let vals = tape.value(logits);
    let maxes: Vec<f64> = vals.rows().into_iter().map(|r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
    let shift = Array2::from_shape_fn(vals.dim(), |(r, _)| -maxes[r]);
    let shift_col = Array2::from_shape_vec((n, 1), maxes).expect("column");
    let shift = tape.constant(shift)?;
    let shifted = tape.add(logits, shift)?;
    let ex = tape.exp(shifted)?;
    let z = tape.sum_cols(ex)?;
    let lse = tape.log(z)?;
    let back = tape.constant(shift_col)?;
    let lse = tape.add(lse, back)?;
    let per_query = tape.sub(lse, pos)?;
    Ok(tape.mean(per_query)?)
}

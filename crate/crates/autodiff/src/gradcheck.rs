use ndarray::Array2;

use crate::tape::{Tape, Var};
use crate::{AdError, Result};

/// `|a - b| / max(|a|, |b|, 1)`: relative for large magnitudes, absolute
/// below one so that near-zero gradients do not amplify rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compares tape gradients of a scalar function against central finite
/// differences and returns the largest [`relative_error`] over every input
/// coordinate.
pub fn gradcheck<F>(f: F, inputs: &[Array2<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = vals
            .iter()
            .map(|v| tape.param(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        if tape.shape(out) != (1, 1) {
            return Err(AdError::NonScalarLoss(tape.shape(out)));
        }
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|v| tape.param(v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let shape = inputs[k].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = work[k][[r, c]];
                work[k][[r, c]] = orig + eps;
                let plus = eval(&work)?;
                work[k][[r, c]] = orig - eps;
                let minus = eval(&work)?;
                work[k][[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                worst = worst.max(relative_error(analytic[[r, c]], numeric));
            }
        }
    }
    Ok(worst)
}

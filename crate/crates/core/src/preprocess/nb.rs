//! Per-gene negative-binomial GLM with a log-depth offset, dispersion
//! regularization, and Pearson residuals.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::binio::LabeledMatrix;
use crate::data::CountMatrix;
use crate::{CoreError, Result};

pub const THETA_MIN: f64 = 1e-3;
pub const THETA_MAX: f64 = 1e6;
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 100;
const GOLDEN_TOL: f64 = 1e-4;
/// Neighbors in the rolling median used to regularize dispersions.
pub const SMOOTHING_WINDOW: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbFit {
    pub genes: Vec<String>,
    /// Log-scale intercept per gene; the fitted mean is `exp(b0) * depth`.
    pub intercept: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_reg: Vec<f64>,
    /// True where the likelihood fit failed and the moment estimate is used.
    pub moment_fallback: Vec<bool>,
    pub depths: Vec<f64>,
}

impl NbFit {
    pub fn mu(&self, gene: usize, cell: usize) -> f64 {
        self.intercept[gene].exp() * self.depths[cell]
    }
}

/// Single-gene maximum-likelihood result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneFit {
    pub intercept: f64,
    pub theta: f64,
    pub loglik: f64,
    pub fallback: bool,
}

/// `ln Γ(x + θ) − ln Γ(θ) − ln Γ(x + 1)`, summed exactly for small integer x
/// to avoid cancellation at large θ.
fn ln_nb_coef(x: f64, theta: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x.fract() == 0.0 && x <= 1000.0 {
        let mut s = 0.0;
        for k in 0..x as u64 {
            let k = k as f64;
            s += (theta + k).ln() - (k + 1.0).ln();
        }
        s
    } else {
        ln_gamma(x + theta) - ln_gamma(theta) - ln_gamma(x + 1.0)
    }
}

/// Counts grouped by value: `tail[k]` is the number of cells with an
/// integer count above `k`. Non-integer or very large counts go through
/// `ln_nb_coef` one by one.
struct CountTail {
    tail: Vec<f64>,
    irregular: Vec<f64>,
}

impl CountTail {
    fn new(x: &[f64]) -> Self {
        let mut hist: Vec<f64> = Vec::new();
        let mut irregular = Vec::new();
        for &v in x {
            if v == 0.0 {
                continue;
            }
            if v.fract() == 0.0 && v <= 1000.0 {
                let k = v as usize;
                if hist.len() <= k {
                    hist.resize(k + 1, 0.0);
                }
                hist[k] += 1.0;
            } else {
                irregular.push(v);
            }
        }
        let mut tail = vec![0.0; hist.len().saturating_sub(1)];
        let mut above = 0.0;
        for k in (0..tail.len()).rev() {
            above += hist[k + 1];
            tail[k] = above;
        }
        Self { tail, irregular }
    }

    /// Sum of `ln_nb_coef` over all cells.
    fn coef_sum(&self, theta: f64) -> f64 {
        let grouped: f64 = self
            .tail
            .iter()
            .enumerate()
            .map(|(k, &n)| n * ((theta + k as f64).ln() - (k as f64 + 1.0).ln()))
            .sum();
        grouped + self.irregular.iter().map(|&v| ln_nb_coef(v, theta)).sum::<f64>()
    }
}

/// The part of the log-likelihood that depends on the intercept.
/// `ln_s` holds the logs of the depths `s`.
fn loglik_mean_terms(x: &[f64], s: &[f64], ln_s: &[f64], b0: f64, theta: f64) -> f64 {
    let scale = b0.exp();
    let ln_theta = theta.ln();
    let mut total = 0.0;
    for ((&x, &s), &ln_s) in x.iter().zip(s).zip(ln_s) {
        let ln_d = (theta + scale * s).ln();
        total += theta * (ln_theta - ln_d);
        if x > 0.0 {
            total += x * (b0 + ln_s - ln_d);
        }
    }
    total
}

/// NB log-likelihood of counts `x` with means `exp(b0) * s` and shape θ.
pub fn nb_loglik(x: &[f64], s: &[f64], b0: f64, theta: f64) -> f64 {
    let ln_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    CountTail::new(x).coef_sum(theta) + loglik_mean_terms(x, s, &ln_s, b0, theta)
}

/// Newton iterations on the intercept for fixed θ, with step halving.
fn fit_intercept(x: &[f64], s: &[f64], ln_s: &[f64], tail: &CountTail, theta: f64, start: f64) -> Option<(f64, f64)> {
    let coef = tail.coef_sum(theta);
    let ll_at = |b: f64| coef + loglik_mean_terms(x, s, ln_s, b, theta);
    let mut b = start;
    let mut ll = ll_at(b);
    for _ in 0..NEWTON_MAX_ITER {
        let scale = b.exp();
        let (mut score, mut info) = (0.0, 0.0);
        for (&x, &s) in x.iter().zip(s) {
            let mu = scale * s;
            let d = theta + mu;
            score += theta * (x - mu) / d;
            info += theta * mu * (x + theta) / (d * d);
        }
        if !(info > 0.0) {
            return None;
        }
        let mut step = score / info;
        let mut next = b + step;
        let mut next_ll = ll_at(next);
        let mut halvings = 0;
        while !(next_ll >= ll - 1e-12) && halvings < 30 {
            step *= 0.5;
            next = b + step;
            next_ll = ll_at(next);
            halvings += 1;
        }
        if !next_ll.is_finite() {
            return None;
        }
        let done = (next_ll - ll).abs() < NEWTON_TOL && step.abs() < 1e-6;
        b = next;
        ll = next_ll;
        if done {
            return Some((b, ll));
        }
    }
    Some((b, ll))
}

fn moment_fit(x: &[f64], s: &[f64]) -> GeneFit {
    let b0 = (x.iter().sum::<f64>() / s.iter().sum::<f64>()).ln();
    let scale = b0.exp();
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &s) in x.iter().zip(s) {
        let mu = scale * s;
        num += mu * mu;
        den += (x - mu) * (x - mu) - mu;
    }
    let theta = if den > 0.0 {
        (num / den).clamp(THETA_MIN, THETA_MAX)
    } else {
        THETA_MAX
    };
    GeneFit {
        intercept: b0,
        theta,
        loglik: nb_loglik(x, s, b0, theta),
        fallback: true,
    }
}

/// Fit one gene: θ profiled by golden-section search on ln θ, intercept by
/// Newton for each candidate θ.
pub fn fit_gene(x: &[f64], s: &[f64]) -> Result<GeneFit> {
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(CoreError::Data("all-zero gene cannot be fitted".into()));
    }
    // Canonical cell order, so sums and hence the fit do not depend on
    // the input order of cells.
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(s[a].total_cmp(&s[b])));
    let x: &[f64] = &order.iter().map(|&i| x[i]).collect::<Vec<_>>();
    let s: &[f64] = &order.iter().map(|&i| s[i]).collect::<Vec<_>>();
    let start = (total / s.iter().sum::<f64>()).ln();
    let tail = CountTail::new(x);
    let ln_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let profile = |log_theta: f64| fit_intercept(x, s, &ln_s, &tail, log_theta.exp(), start);

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (THETA_MIN.ln(), THETA_MAX.ln());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (Some(mut fc), Some(mut fd)) = (profile(c), profile(d)) else {
        return Ok(moment_fit(x, s));
    };
    while b - a > GOLDEN_TOL {
        if fc.1 >= fd.1 {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            match profile(c) {
                Some(f) => fc = f,
                None => return Ok(moment_fit(x, s)),
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            match profile(d) {
                Some(f) => fd = f,
                None => return Ok(moment_fit(x, s)),
            }
        }
    }
    let (log_theta, (b0, ll)) = if fc.1 >= fd.1 { (c, fc) } else { (d, fd) };
    if !(b0.is_finite() && ll.is_finite()) {
        return Ok(moment_fit(x, s));
    }
    Ok(GeneFit {
        intercept: b0,
        theta: log_theta.exp(),
        loglik: ll,
        fallback: false,
    })
}

/// Rolling median of `values` ordered by `keys`, window `w` centered and
/// shifted inward at the ends. Returned in the original order.
pub fn rolling_median(keys: &[f64], values: &[f64], w: usize) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    let w = w.min(n).max(1);
    let mut out = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        let lo = rank.saturating_sub(w / 2).min(n - w);
        let mut window: Vec<f64> = order[lo..lo + w].iter().map(|&j| values[j]).collect();
        window.sort_by(f64::total_cmp);
        out[i] = if w % 2 == 1 {
            window[w / 2]
        } else {
            0.5 * (window[w / 2 - 1] + window[w / 2])
        };
    }
    out
}

pub fn fit_nb_glm(m: &CountMatrix) -> Result<NbFit> {
    let depths: Vec<f64> = m.depths().into_iter().map(|d| d as f64).collect();
    if depths.iter().any(|&d| d <= 0.0) {
        return Err(CoreError::Data("cell with zero depth; run QC first".into()));
    }
    let fits: Vec<GeneFit> = (0..m.n_genes())
        .into_par_iter()
        .map(|g| {
            fit_gene(&m.dense_column(g), &depths)
                .map_err(|e| CoreError::Data(format!("gene {}: {e}", m.genes[g])))
        })
        .collect::<Result<_>>()?;
    let mean_depth = depths.iter().sum::<f64>() / depths.len() as f64;
    let log_mean: Vec<f64> = fits.iter().map(|f| f.intercept + mean_depth.ln()).collect();
    let log_theta: Vec<f64> = fits.iter().map(|f| f.theta.ln()).collect();
    let theta_reg = rolling_median(&log_mean, &log_theta, SMOOTHING_WINDOW)
        .into_iter()
        .map(f64::exp)
        .collect();
    Ok(NbFit {
        genes: m.genes.clone(),
        intercept: fits.iter().map(|f| f.intercept).collect(),
        theta: fits.iter().map(|f| f.theta).collect(),
        theta_reg,
        moment_fallback: fits.iter().map(|f| f.fallback).collect(),
        depths,
    })
}

/// `(x − μ) / sqrt(μ + μ²/θ)`.
pub fn pearson_residual(x: f64, mu: f64, theta: f64) -> f64 {
    (x - mu) / (mu + mu * mu / theta).sqrt()
}

/// Dense cells × genes Pearson residuals with per-gene variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    pub values: Array2<f64>,
    pub genes: Vec<String>,
    pub barcodes: Vec<String>,
    pub variance: Vec<f64>,
}

impl ResidualMatrix {
    pub fn to_labeled(&self) -> LabeledMatrix {
        LabeledMatrix {
            values: self.values.clone(),
            names: self.genes.clone(),
            row_names: self.barcodes.clone(),
        }
    }
}

pub fn pearson_residuals(m: &CountMatrix, fit: &NbFit) -> Result<ResidualMatrix> {
    if fit.genes != m.genes || fit.depths.len() != m.n_cells() {
        return Err(CoreError::Data("fit does not correspond to matrix".into()));
    }
    let n = m.n_cells();
    let clip = (n as f64).sqrt();
    let columns: Vec<Vec<f64>> = (0..m.n_genes())
        .into_par_iter()
        .map(|g| {
            let x = m.dense_column(g);
            (0..n)
                .map(|c| pearson_residual(x[c], fit.mu(g, c), fit.theta_reg[g]).clamp(-clip, clip))
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((n, m.n_genes()));
    let mut variance = Vec::with_capacity(m.n_genes());
    for (g, col) in columns.iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric(format!(
                "non-finite residual for gene {}",
                m.genes[g]
            )));
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        variance.push(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64);
        values.column_mut(g).assign(&ndarray::ArrayView1::from(col));
    }
    Ok(ResidualMatrix {
        values,
        genes: m.genes.clone(),
        barcodes: m.barcodes.clone(),
        variance,
    })
}

/// Indices of the `k` most variable genes, descending variance, ties by
/// gene name.
pub fn select_hvgs(r: &ResidualMatrix, k: usize) -> Result<Vec<usize>> {
    let p = r.genes.len();
    if k == 0 || k > p {
        return Err(CoreError::Config(format!("HVG count {k} outside 1..={p}")));
    }
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| {
        r.variance[b]
            .total_cmp(&r.variance[a])
            .then_with(|| r.genes[a].cmp(&r.genes[b]))
    });
    idx.truncate(k);
    Ok(idx)
}

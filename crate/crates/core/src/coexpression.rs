//! Moment-based IRLS estimates of latent gene means and covariances under a
//! Poisson measurement model, and the pairwise independence test whose
//! rejections define co-expression edges.
//!
//! With depth `s_i`, the moment equations are
//!
//! ```text
//! x_ij = s_i μ_j + ε_ij
//! (x_ij − s_i μ_j)² = s_i μ_j + s_i² σ_jj + η_ij
//! (x_ij − s_i μ_j)(x_ik − s_i μ_k) = s_i² σ_jk + ξ_ijk
//! ```
//!
//! each solved by weighted least squares with weights `w_ij = 1/v_ij`,
//! `v_ij = s_i μ_j + s_i² σ_jj`.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::CountMatrix;
use crate::{CoreError, Result};

pub const MAX_IRLS_ITER: usize = 50;
pub const IRLS_TOL: f64 = 1e-6;
pub const MIN_CELLS: usize = 30;
pub const DEFAULT_ALPHA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct CoexpressionEstimate {
    /// Column indices into the source matrix.
    pub gene_idx: Vec<usize>,
    pub genes: Vec<String>,
    pub depths: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Array2<f64>,
    pub rho: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl CoexpressionEstimate {
    /// Genes whose variance estimate was floored at zero.
    pub fn degenerate(&self) -> Vec<usize> {
        (0..self.mu.len()).filter(|&j| !(self.sigma[[j, j]] > 0.0)).collect()
    }
}

fn weights(s: &[f64], mu: &[f64], var: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((s.len(), mu.len()), |(i, j)| {
        let v = s[i] * mu[j] + s[i] * s[i] * var[j].max(0.0);
        if v > 0.0 {
            1.0 / v
        } else {
            0.0
        }
    })
}

/// Weighted regression of the mean and variance equations, gene by gene.
fn moment_step(x: &Array2<f64>, s: &[f64], w: Option<&Array2<f64>>) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = x.dim();
    let mut mu = vec![0.0; p];
    let mut var = vec![0.0; p];
    for j in 0..p {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let wi = w.map_or(1.0, |w| w[[i, j]]);
            num += wi * x[[i, j]] * s[i];
            den += wi * s[i] * s[i];
        }
        mu[j] = if den > 0.0 { num / den } else { 0.0 };
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let hi = w.map_or(1.0, |w| w[[i, j]] * w[[i, j]]);
            let r = x[[i, j]] - s[i] * mu[j];
            let s2 = s[i] * s[i];
            num += hi * s2 * (r * r - s[i] * mu[j]);
            den += hi * s2 * s2;
        }
        var[j] = if den > 0.0 { num / den } else { 0.0 };
    }
    (mu, var)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Products `AᵀA` and `BᵀB` with `A_ij = s_i r_ij w_ij`, `B_ij = s_i² w_ij`.
fn cross_products(x: &Array2<f64>, s: &[f64], mu: &[f64], w: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (n, p) = x.dim();
    let a = Array2::from_shape_fn((n, p), |(i, j)| s[i] * (x[[i, j]] - s[i] * mu[j]) * w[[i, j]]);
    let b = Array2::from_shape_fn((n, p), |(i, j)| s[i] * s[i] * w[[i, j]]);
    let mut ata = a.t().dot(&a);
    let mut btb = b.t().dot(&b);
    for j in 0..p {
        for k in 0..j {
            ata[[j, k]] = ata[[k, j]];
            btb[[j, k]] = btb[[k, j]];
        }
    }
    (ata, btb)
}

/// Estimate latent means, covariances and correlations for `genes`.
pub fn estimate_moments_irls(m: &CountMatrix, genes: &[usize]) -> Result<CoexpressionEstimate> {
    let n = m.n_cells();
    if n < MIN_CELLS {
        return Err(CoreError::Data(format!(
            "co-expression needs at least {MIN_CELLS} cells, got {n}"
        )));
    }
    if genes.is_empty() {
        return Err(CoreError::Data("no genes to estimate".into()));
    }
    if let Some(&g) = genes.iter().find(|&&g| g >= m.n_genes()) {
        return Err(CoreError::Data(format!("gene index {g} out of range")));
    }
    let s: Vec<f64> = m.depths().into_iter().map(|d| d as f64).collect();
    if s.iter().any(|&d| d <= 0.0) {
        return Err(CoreError::Data("cell with zero depth; run QC first".into()));
    }
    let x = m.dense_genes(genes);

    let (mut mu, mut var) = moment_step(&x, &s, None);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_IRLS_ITER {
        iterations += 1;
        let w = weights(&s, &mu, &var);
        let (mu_new, var_new) = moment_step(&x, &s, Some(&w));
        let diff: Vec<f64> = var_new.iter().zip(&var).map(|(a, b)| a - b).collect();
        let change = norm(&diff) / norm(&var_new).max(f64::MIN_POSITIVE);
        mu = mu_new;
        var = var_new;
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("IRLS stopped after {MAX_IRLS_ITER} iterations without converging");
    }

    let w = weights(&s, &mu, &var);
    let (ata, btb) = cross_products(&x, &s, &mu, &w);
    let p = genes.len();
    let mut sigma = Array2::from_shape_fn((p, p), |(j, k)| {
        if btb[[j, k]] > 0.0 {
            ata[[j, k]] / btb[[j, k]]
        } else {
            0.0
        }
    });
    for j in 0..p {
        sigma[[j, j]] = var[j].max(0.0);
    }
    let rho = Array2::from_shape_fn((p, p), |(j, k)| {
        if j == k {
            1.0
        } else if sigma[[j, j]] > 0.0 && sigma[[k, k]] > 0.0 {
            (sigma[[j, k]] / (sigma[[j, j]] * sigma[[k, k]]).sqrt()).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    });
    if sigma.iter().chain(rho.iter()).any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric("non-finite co-expression estimate".into()));
    }
    Ok(CoexpressionEstimate {
        gene_idx: genes.to_vec(),
        genes: genes.iter().map(|&g| m.genes[g].clone()).collect(),
        depths: s,
        mu,
        sigma,
        rho,
        converged,
        iterations,
    })
}

/// Test statistic for one gene pair given per-cell residuals, model
/// variances and weights:
/// `Σ s² r_j r_k g / sqrt(Σ s⁴ v_j v_k g²)`.
pub fn pair_statistic(
    depth: &[f64],
    resid_j: &[f64],
    resid_k: &[f64],
    var_j: &[f64],
    var_k: &[f64],
    weight: &[f64],
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..depth.len() {
        let s2 = depth[i] * depth[i];
        num += s2 * resid_j[i] * resid_k[i] * weight[i];
        den += s2 * s2 * var_j[i] * var_k[i] * weight[i] * weight[i];
    }
    if den > 0.0 {
        num / den.sqrt()
    } else {
        0.0
    }
}

/// Two-sided standard-normal p-value.
pub fn normal_two_sided(t: f64) -> f64 {
    erfc(t.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTest {
    pub statistic: Array2<f64>,
    pub pvalue: Array2<f64>,
}

/// Statistic and p-value matrices for every pair in `est`, using the final
/// IRLS weights `g_ijk = w_ij w_ik`.
pub fn cscore_test(est: &CoexpressionEstimate, m: &CountMatrix) -> Result<PairTest> {
    if m.n_cells() != est.depths.len() || est.gene_idx.iter().any(|&g| g >= m.n_genes()) {
        return Err(CoreError::Data("estimate does not match matrix".into()));
    }
    let x = m.dense_genes(&est.gene_idx);
    let var: Vec<f64> = (0..est.mu.len()).map(|j| est.sigma[[j, j]]).collect();
    let w = weights(&est.depths, &est.mu, &var);
    let (ata, btb) = cross_products(&x, &est.depths, &est.mu, &w);
    let p = est.mu.len();
    let dead: Vec<bool> = (0..p)
        .map(|j| !(var[j] > 0.0) || w.index_axis(Axis(1), j).iter().all(|&v| v == 0.0))
        .collect();
    let mut statistic = Array2::zeros((p, p));
    let mut pvalue = Array2::zeros((p, p));
    for j in 0..p {
        for k in 0..p {
            if j == k {
                continue;
            }
            if dead[j] || dead[k] || !(btb[[j, k]] > 0.0) {
                pvalue[[j, k]] = 1.0;
                continue;
            }
            let t = ata[[j, k]] / btb[[j, k]].sqrt();
            statistic[[j, k]] = t;
            pvalue[[j, k]] = normal_two_sided(t);
        }
    }
    Ok(PairTest { statistic, pvalue })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    /// Pairs `(j, k)` with `j < k`, in lexicographic order.
    pub edges: Vec<(usize, usize)>,
    pub alpha: f64,
}

pub fn build_edges(pvals: &Array2<f64>, alpha: f64) -> Result<EdgeSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoreError::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    let (p, q) = pvals.dim();
    if p != q {
        return Err(CoreError::Data("p-value matrix is not square".into()));
    }
    let mut edges = Vec::new();
    for j in 0..p {
        for k in (j + 1)..p {
            if pvals[[j, k]] < alpha {
                edges.push((j, k));
            }
        }
    }
    Ok(EdgeSet { edges, alpha })
}

/// One row of an edges TSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub gene_a: String,
    pub gene_b: String,
    pub rho: f64,
    pub pval: f64,
}

pub const EDGES_HEADER: &str = "gene_a\tgene_b\trho\tpval";

pub fn edges_to_tsv(genes: &[String], edges: &EdgeSet, rho: &Array2<f64>, pvals: &Array2<f64>) -> String {
    let mut s = String::from(EDGES_HEADER);
    s.push('\n');
    for &(j, k) in &edges.edges {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            genes[j], genes[k], rho[[j, k]], pvals[[j, k]]
        ));
    }
    s
}

pub fn parse_edges_tsv(text: &str) -> Result<Vec<EdgeRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == EDGES_HEADER => {}
        _ => return Err(CoreError::parse("edges", format!("header must be {EDGES_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let ctx = || format!("edges line {}", i + 2);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 || f[0].is_empty() || f[1].is_empty() {
            return Err(CoreError::parse(ctx(), "expected gene_a, gene_b, rho, pval"));
        }
        let num = |t: &str| -> Result<f64> {
            let v: f64 = t.parse().map_err(|_| CoreError::parse(ctx(), format!("bad number {t:?}")))?;
            if v.is_nan() {
                return Err(CoreError::parse(ctx(), "NaN"));
            }
            Ok(v)
        };
        out.push(EdgeRecord {
            gene_a: f[0].to_string(),
            gene_b: f[1].to_string(),
            rho: num(f[2])?,
            pval: num(f[3])?,
        });
    }
    Ok(out)
}

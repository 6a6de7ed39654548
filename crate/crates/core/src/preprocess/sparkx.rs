//! Spatial-variability test of gene expression against transformed
//! coordinates (identity, Gaussian and cosine kernels).
//!
//! For a kernel, `S` is the n×2 transformed coordinate matrix and `S_c` its
//! column-centered version. With `y_c` the centered expression vector,
//! `trace(E_C Σ_C) = y_cᵀ S_c (S_cᵀS_c)⁻¹ S_cᵀ y_c / y_cᵀy_c`, the R² of
//! regressing `y_c` on `S_c`. The reported statistic is `T = R²/n`, and
//! `n·R² = n²·T` is referred to χ² with 2 degrees of freedom.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::CountMatrix;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Identity,
    Gaussian,
    Cosine,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Identity, Kernel::Gaussian, Kernel::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Identity => "identity",
            Kernel::Gaussian => "gaussian",
            Kernel::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Degrees of freedom of the reference distribution (rank of `S_c`).
pub const REFERENCE_DF: f64 = 2.0;

/// Centered kernel coordinates with the inverse of their Gram matrix.
#[derive(Debug, Clone)]
pub struct KernelDesign {
    pub kernel: Kernel,
    /// Centered n×2 design, row-major pairs.
    pub centered: Vec<[f64; 2]>,
    gram_inv: [[f64; 2]; 2],
}

fn center(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    pts.iter().map(|p| [p[0] - mx, p[1] - my]).collect()
}

impl KernelDesign {
    pub fn new(coords: &[[f64; 2]], kernel: Kernel) -> Result<Self> {
        let n = coords.len();
        if n < 3 {
            return Err(CoreError::Data("degenerate coordinates: fewer than 3 spots".into()));
        }
        let c = center(coords);
        let transformed: Vec<[f64; 2]> = match kernel {
            Kernel::Identity => c.clone(),
            Kernel::Gaussian => {
                let sd: Vec<f64> = (0..2)
                    .map(|d| (c.iter().map(|p| p[d] * p[d]).sum::<f64>() / n as f64).sqrt())
                    .collect();
                c.iter()
                    .map(|p| {
                        let f = |d: usize| {
                            if sd[d] > 0.0 {
                                (-p[d] * p[d] / (2.0 * sd[d] * sd[d])).exp()
                            } else {
                                1.0
                            }
                        };
                        [f(0), f(1)]
                    })
                    .collect()
            }
            Kernel::Cosine => {
                let range: Vec<f64> = (0..2)
                    .map(|d| {
                        let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
                            (acc.0.min(p[d]), acc.1.max(p[d]))
                        });
                        hi - lo
                    })
                    .collect();
                c.iter()
                    .map(|p| {
                        let f = |d: usize| {
                            if range[d] > 0.0 {
                                (2.0 * std::f64::consts::PI * p[d] / range[d]).cos()
                            } else {
                                1.0
                            }
                        };
                        [f(0), f(1)]
                    })
                    .collect()
            }
        };
        let centered = center(&transformed);
        let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
        for p in &centered {
            a += p[0] * p[0];
            b += p[0] * p[1];
            d += p[1] * p[1];
        }
        let det = a * d - b * b;
        let scale = (a + d) * (a + d);
        if !(det > 1e-10 * scale) || !(scale > 0.0) {
            return Err(CoreError::Data(format!(
                "degenerate coordinates: {kernel} kernel design is singular"
            )));
        }
        Ok(Self {
            kernel,
            centered,
            gram_inv: [[d / det, -b / det], [-b / det, a / det]],
        })
    }

    /// `trace(E_C Σ_C)` for the expression vector `y`; `None` if `y` is constant.
    pub fn projection_trace(&self, y: &[f64]) -> Option<f64> {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let yy: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        if !(yy > 1e-12 * (1.0 + mean * mean) * n) {
            return None;
        }
        // S_c is centered, so S_cᵀ y_c = S_cᵀ y.
        let mut u = [0.0; 2];
        for (p, &v) in self.centered.iter().zip(y) {
            u[0] += p[0] * v;
            u[1] += p[1] * v;
        }
        let g = &self.gram_inv;
        let quad = u[0] * (g[0][0] * u[0] + g[0][1] * u[1]) + u[1] * (g[1][0] * u[0] + g[1][1] * u[1]);
        Some((quad / yy).clamp(0.0, 1.0))
    }

    /// Statistic `T` and its p-value for one expression vector.
    pub fn test(&self, y: &[f64]) -> (f64, f64) {
        let n = y.len() as f64;
        match self.projection_trace(y) {
            None => (0.0, 1.0),
            Some(r2) => (r2 / n, chi2_upper(n * r2)),
        }
    }
}

fn chi2_upper(x: f64) -> f64 {
    let dist = ChiSquared::new(REFERENCE_DF).expect("valid df");
    dist.sf(x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelResult {
    pub kernel: Kernel,
    pub statistic: Vec<f64>,
    pub pvalue: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialTestResult {
    pub genes: Vec<String>,
    pub kernels: Vec<KernelResult>,
    /// `min(1, K · min_k p_k)` over the K kernels.
    pub combined_p: Vec<f64>,
}

impl SpatialTestResult {
    /// Largest per-kernel statistic of a gene, used as the first tie-break.
    pub fn max_statistic(&self, g: usize) -> f64 {
        self.kernels
            .iter()
            .map(|k| k.statistic[g])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("gene");
        for k in &self.kernels {
            s.push_str(&format!("\t{0}_statistic\t{0}_pvalue", k.kernel));
        }
        s.push_str("\tcombined_pvalue\n");
        for (g, name) in self.genes.iter().enumerate() {
            s.push_str(name);
            for k in &self.kernels {
                s.push_str(&format!("\t{}\t{}", k.statistic[g], k.pvalue[g]));
            }
            s.push_str(&format!("\t{}\n", self.combined_p[g]));
        }
        s
    }
}

pub fn sparkx_test(m: &CountMatrix) -> Result<SpatialTestResult> {
    let coords = m
        .coords
        .as_ref()
        .ok_or_else(|| CoreError::Data("spatial test needs coordinates".into()))?;
    let designs: Vec<KernelDesign> = Kernel::ALL
        .iter()
        .map(|&k| KernelDesign::new(coords, k))
        .collect::<Result<_>>()?;
    let per_gene: Vec<Vec<(f64, f64)>> = (0..m.n_genes())
        .into_par_iter()
        .map(|g| {
            let y = m.dense_column(g);
            designs.iter().map(|d| d.test(&y)).collect()
        })
        .collect();
    let kernels = designs
        .iter()
        .enumerate()
        .map(|(k, d)| KernelResult {
            kernel: d.kernel,
            statistic: per_gene.iter().map(|r| r[k].0).collect(),
            pvalue: per_gene.iter().map(|r| r[k].1).collect(),
        })
        .collect();
    let combined_p = per_gene
        .iter()
        .map(|r| {
            let min = r.iter().map(|x| x.1).fold(1.0, f64::min);
            (min * r.len() as f64).min(1.0)
        })
        .collect();
    Ok(SpatialTestResult {
        genes: m.genes.clone(),
        kernels,
        combined_p,
    })
}

/// Indices of the `k` genes with the smallest combined p-value; ties by
/// statistic descending, then gene name.
pub fn select_se_genes(res: &SpatialTestResult, k: usize) -> Result<Vec<usize>> {
    let p = res.genes.len();
    if k == 0 || k > p {
        return Err(CoreError::Config(format!("SE gene count {k} outside 1..={p}")));
    }
    let stat: Vec<f64> = (0..p).map(|g| res.max_statistic(g)).collect();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| {
        res.combined_p[a]
            .total_cmp(&res.combined_p[b])
            .then_with(|| stat[b].total_cmp(&stat[a]))
            .then_with(|| res.genes[a].cmp(&res.genes[b]))
    });
    idx.truncate(k);
    Ok(idx)
}

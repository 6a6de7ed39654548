//! Normalization and gene selection ahead of graph construction.

mod nb;
mod sparkx;

pub use nb::{
    fit_gene, fit_nb_glm, nb_loglik, pearson_residual, pearson_residuals, rolling_median,
    select_hvgs, GeneFit, NbFit, ResidualMatrix, SMOOTHING_WINDOW, THETA_MAX, THETA_MIN,
};
pub use sparkx::{
    select_se_genes, sparkx_test, Kernel, KernelDesign, KernelResult, SpatialTestResult,
    REFERENCE_DF,
};

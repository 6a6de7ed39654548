//! Synthetic collections with planted co-expression modules.
//!
//! Latent expression follows a Gamma model whose module genes share a
//! common Gamma component, so within-module latent correlation is exactly
//! `within_corr` and marginals stay Gamma. Observed counts are
//! `Poisson(s_i * z_ij)`, i.e. negative binomial after integrating `z`.
//! Module genes carry a fixed small share of each cell's expected counts,
//! so cell totals stay close to the technical size factor.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::{CountMatrix, Dataset, DatasetMeta, Modality};
use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_datasets: usize,
    pub n_cells: usize,
    pub n_genes: usize,
    pub n_modules: usize,
    pub module_size: usize,
    /// Latent correlation between genes of the same module.
    pub within_corr: f64,
    /// Fraction of each dataset's genes whose names are shared across all
    /// datasets.
    pub shared_gene_fraction: f64,
    /// Fraction of each module's genes whose names are shared across all
    /// datasets; the rest are dataset-private.
    pub module_shared_fraction: f64,
    /// Average latent mean per gene (expected counts at unit depth).
    pub base_mean: f64,
    /// Fraction of a cell's expected counts carried by module genes. Kept
    /// small so that cell totals track the technical size factor.
    pub module_expression_share: f64,
    /// Gamma shape of the latent expression (NB dispersion θ).
    pub dispersion: f64,
    /// Log-scale spread of cell size factors.
    pub depth_sdlog: f64,
    /// Per-dataset modality; missing entries default to scRNA.
    pub modalities: Vec<Modality>,
    pub tissue: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_datasets: 3,
            n_cells: 2000,
            n_genes: 200,
            n_modules: 2,
            module_size: 60,
            within_corr: 0.8,
            shared_gene_fraction: 0.6,
            module_shared_fraction: 0.8,
            base_mean: 5.0,
            module_expression_share: 0.1,
            dispersion: 2.0,
            depth_sdlog: 0.3,
            modalities: Vec::new(),
            tissue: "synthetic".into(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn split(total: usize, fraction: f64) -> (usize, usize) {
        let shared = (total as f64 * fraction).round() as usize;
        (shared, total - shared)
    }

    fn gene_split(&self) -> (usize, usize) {
        Self::split(self.n_genes, self.shared_gene_fraction)
    }

    fn module_split(&self) -> (usize, usize) {
        Self::split(self.module_size, self.module_shared_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(format!("synthetic spec: {m}")));
        if self.n_datasets == 0 || self.n_cells == 0 || self.n_genes == 0 {
            return bad("n_datasets, n_cells and n_genes must be positive".into());
        }
        if self.n_modules * self.module_size > self.n_genes {
            return bad(format!(
                "{} modules of {} genes exceed {} genes",
                self.n_modules, self.module_size, self.n_genes
            ));
        }
        if self.n_modules > 0 && self.module_size < 2 {
            return bad("modules need at least two genes".into());
        }
        if !(0.0..=1.0).contains(&self.shared_gene_fraction) || !(0.0..=1.0).contains(&self.module_shared_fraction) {
            return bad("shared fractions must be in [0, 1]".into());
        }
        if !(self.module_expression_share > 0.0 && self.module_expression_share < 1.0) {
            return bad("module_expression_share must be in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.within_corr) {
            return bad("within_corr must be in [0, 1)".into());
        }
        if !(self.base_mean > 0.0 && self.dispersion > 0.0 && self.depth_sdlog >= 0.0) {
            return bad("base_mean and dispersion must be positive".into());
        }
        let (gs, gp) = self.gene_split();
        let (ms, mp) = self.module_split();
        if self.n_modules * ms > gs || self.n_modules * mp > gp {
            return bad("modules do not fit in the shared/private gene split".into());
        }
        if self.modalities.len() > self.n_datasets {
            return bad("more modalities than datasets".into());
        }
        Ok(())
    }

    pub fn modality(&self, d: usize) -> Modality {
        self.modalities.get(d).copied().unwrap_or(Modality::ScRna)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDataset {
    pub dataset_id: String,
    /// Gene names of each planted module present in this dataset.
    pub modules: Vec<Vec<String>>,
    /// Latent mean per gene, in the dataset's gene order.
    pub latent_means: Vec<f64>,
    /// True cell size factors, in barcode order.
    pub size_factors: Vec<f64>,
}

/// Ground truth recorded by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub spec: SyntheticSpec,
    pub datasets: Vec<PlantedDataset>,
}

impl PlantedTruth {
    /// Planted neighbor sets (module co-membership) by gene name.
    pub fn neighbors(&self, dataset_id: &str) -> Option<BTreeMap<String, BTreeSet<String>>> {
        let d = self.datasets.iter().find(|d| d.dataset_id == dataset_id)?;
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for module in &d.modules {
            for a in module {
                let entry = out.entry(a.clone()).or_default();
                for b in module {
                    if a != b {
                        entry.insert(b.clone());
                    }
                }
            }
        }
        Some(out)
    }
}

/// Generator output. `latent` holds the cells × genes latent expression of
/// each dataset; it is not written to disk.
#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub datasets: Vec<Dataset>,
    pub truth: PlantedTruth,
    pub latent: Vec<Array2<f64>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCollection> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n_shared, n_private) = spec.gene_split();
    let (mod_shared, mod_private) = spec.module_split();
    let shape = spec.dispersion;
    let rho = spec.within_corr;

    let mean_dist = LogNormal::new(-0.125, 0.5).expect("valid lognormal");
    let depth_dist = LogNormal::new(-0.5 * spec.depth_sdlog * spec.depth_sdlog, spec.depth_sdlog)
        .map_err(|e| CoreError::Config(e.to_string()))?;
    let gamma = |k: f64| Gamma::new(k, 1.0).map_err(|e| CoreError::Config(e.to_string()));
    let full = gamma(shape)?;
    let shared_part = if rho > 0.0 { Some(gamma(shape * rho)?) } else { None };
    let own_part = gamma(shape * (1.0 - rho))?;

    let mut datasets = Vec::with_capacity(spec.n_datasets);
    let mut planted = Vec::with_capacity(spec.n_datasets);
    let mut latents = Vec::with_capacity(spec.n_datasets);

    for d in 0..spec.n_datasets {
        let id = format!("synth{d}");
        let modality = spec.modality(d);

        // Gene table: (name, module or None).
        let mut genes: Vec<(String, Option<usize>)> = Vec::with_capacity(spec.n_genes);
        for g in 0..n_shared {
            let module = (g < spec.n_modules * mod_shared).then(|| g / mod_shared.max(1));
            genes.push((format!("G{g:04}"), module));
        }
        for g in 0..n_private {
            let module = (g < spec.n_modules * mod_private).then(|| g / mod_private.max(1));
            genes.push((format!("{id}_P{g:03}"), module));
        }
        genes.shuffle(&mut rng);

        // Relative gene weights, normalized so module genes carry
        // `module_expression_share` of the expected total.
        let weights: Vec<f64> = (0..spec.n_genes).map(|_| mean_dist.sample(&mut rng)).collect();
        let total = spec.base_mean * spec.n_genes as f64;
        let group_sum = |in_module: bool| -> f64 {
            genes
                .iter()
                .zip(&weights)
                .filter(|((_, m), _)| m.is_some() == in_module)
                .map(|(_, w)| w)
                .sum()
        };
        let (module_sum, background_sum) = (group_sum(true), group_sum(false));
        let share = if module_sum > 0.0 && background_sum > 0.0 {
            spec.module_expression_share
        } else if module_sum > 0.0 {
            1.0
        } else {
            0.0
        };
        let means: Vec<f64> = genes
            .iter()
            .zip(&weights)
            .map(|((_, m), w)| match m {
                Some(_) => total * share * w / module_sum,
                None => total * (1.0 - share) * w / background_sum,
            })
            .collect();
        let size_factors: Vec<f64> = (0..spec.n_cells)
            .map(|_| depth_dist.sample(&mut rng))
            .collect();
        let coords: Option<Vec<[f64; 2]>> = (modality == Modality::Spatial).then(|| {
            (0..spec.n_cells)
                .map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)])
                .collect()
        });

        let mut latent = Array2::zeros((spec.n_cells, spec.n_genes));
        let mut counts = Array2::<u64>::zeros((spec.n_cells, spec.n_genes));
        for c in 0..spec.n_cells {
            let mut module_factor: Vec<f64> = (0..spec.n_modules)
                .map(|_| shared_part.map_or(0.0, |g| g.sample(&mut rng)))
                .collect();
            if let (Some(coords), Some(f)) = (&coords, module_factor.first_mut()) {
                // Spatial pattern on the first module; averages to 1 over x.
                *f *= 1.0 + 0.9 * (2.0 * std::f64::consts::PI * coords[c][0] / 100.0).sin();
            }
            for (g, (_, module)) in genes.iter().enumerate() {
                let raw = match module {
                    Some(m) => module_factor[*m] + own_part.sample(&mut rng),
                    None => full.sample(&mut rng),
                };
                let z = means[g] * raw / shape;
                latent[[c, g]] = z;
                let rate = size_factors[c] * z;
                counts[[c, g]] = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| CoreError::Numeric(e.to_string()))?
                        .sample(&mut rng) as u64
                } else {
                    0
                };
            }
        }

        let barcodes = (0..spec.n_cells).map(|c| format!("{id}_C{c:05}")).collect();
        let names: Vec<String> = genes.iter().map(|(n, _)| n.clone()).collect();
        let mut matrix = CountMatrix::from_dense(barcodes, names, &counts)?;
        if let Some(coords) = coords {
            matrix = matrix.with_coords(coords)?;
        }

        let mut modules = vec![Vec::new(); spec.n_modules];
        for (name, module) in &genes {
            if let Some(m) = module {
                modules[*m].push(name.clone());
            }
        }
        for m in &mut modules {
            m.sort();
        }

        planted.push(PlantedDataset {
            dataset_id: id.clone(),
            modules,
            latent_means: means,
            size_factors,
        });
        datasets.push(Dataset {
            meta: DatasetMeta {
                dataset_id: id,
                tissue: spec.tissue.clone(),
                modality,
                species: "synthetic".into(),
            },
            counts: matrix,
        });
        latents.push(latent);
    }

    Ok(SyntheticCollection {
        datasets,
        truth: PlantedTruth {
            spec: spec.clone(),
            datasets: planted,
        },
        latent: latents,
    })
}

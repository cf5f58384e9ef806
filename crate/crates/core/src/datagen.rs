//! Seeded synthetic data: concentric rings, two-component Gaussian or t
//! mixtures, general Gaussian mixtures, and a covariate-augmented mixture.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::randkit::{sample_gaussian_vec, sample_standard_normal, sample_t_vec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MixtureKind {
    Gaussian,
    T { df: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenSpec {
    Rings { n_per_ring: usize, radii: Vec<f64>, noise_sd: f64 },
    GaussMix { n: usize, b: f64 },
    TMix { n: usize, b: f64, df: f64 },
}

impl GenSpec {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Dataset, Partition)> {
        match self {
            GenSpec::Rings { n_per_ring, radii, noise_sd } => gen_rings(*n_per_ring, radii, *noise_sd, rng),
            GenSpec::GaussMix { n, b } => gen_mixture(*n, *b, MixtureKind::Gaussian, rng),
            GenSpec::TMix { n, b, df } => gen_mixture(*n, *b, MixtureKind::T { df: *df }, rng),
        }
    }
}

/// `n_per_ring` points per ring at uniform angles, plus isotropic noise.
pub fn gen_rings<R: Rng + ?Sized>(n_per_ring: usize, radii: &[f64], noise_sd: f64, rng: &mut R) -> Result<(Dataset, Partition)> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::invalid("ring radii must be positive"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!("noise sd must be nonnegative, got {noise_sd}")));
    }
    let mut rows = Vec::with_capacity(n_per_ring * radii.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for (k, &r) in radii.iter().enumerate() {
        for _ in 0..n_per_ring {
            let theta = 2.0 * PI * rng.random::<f64>();
            let x = r * theta.cos() + noise_sd * sample_standard_normal(rng);
            let y = r * theta.sin() + noise_sd * sample_standard_normal(rng);
            rows.push(vec![x, y]);
            labels.push(k);
        }
    }
    Ok((Dataset::from_rows(&rows)?, Partition::from_labels(&labels)))
}

/// Two-component mixture in the plane with means `(0,0)` and `(b,b)`,
/// membership by fair coin flips; components are `N(mu, I)` or independent
/// per-coordinate `t_df` shifted by `mu`.
pub fn gen_mixture<R: Rng + ?Sized>(n: usize, b: f64, kind: MixtureKind, rng: &mut R) -> Result<(Dataset, Partition)> {
    if let MixtureKind::T { df } = kind {
        if !(df >= 1.0 && df.is_finite()) {
            return Err(Error::invalid(format!("degrees of freedom must be at least 1, got {df}")));
        }
    }
    if !b.is_finite() {
        return Err(Error::invalid("offset b must be finite"));
    }
    let means = [[0.0, 0.0], [b, b]];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_bool(0.5) as usize;
        let row = match kind {
            MixtureKind::Gaussian => sample_gaussian_vec(&means[k], 1.0, rng),
            MixtureKind::T { df } => sample_t_vec(&means[k], df, rng)?,
        };
        rows.push(row);
        labels.push(k);
    }
    Ok((Dataset::from_rows(&rows)?, Partition::from_labels(&labels)))
}

/// Equal-weight mixture of `N(mean_k, I)` components.
pub fn gen_gaussian_mixture<R: Rng + ?Sized>(n: usize, means: &[Vec<f64>], rng: &mut R) -> Result<(Dataset, Partition)> {
    if means.is_empty() {
        return Err(Error::invalid("need at least one component"));
    }
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..means.len());
        rows.push(sample_gaussian_vec(&means[k], 1.0, rng));
        labels.push(k);
    }
    Ok((Dataset::from_rows(&rows)?, Partition::from_labels(&labels)))
}

/// Covariate-augmented data set.
#[derive(Debug, Clone)]
pub struct CovariateData {
    pub data: Dataset,
    pub covariates: Vec<Vec<f64>>,
    pub truth: Partition,
}

/// Three groups with two informative measurement dimensions and two
/// covariate dimensions that shift mildly with the group.
pub fn gen_covariate_mixture<R: Rng + ?Sized>(n_per_group: usize, rng: &mut R) -> Result<CovariateData> {
    let centers = [[0.0, 0.0], [6.0, 0.0], [3.0, 6.0]];
    let cov_centers = [[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0]];
    let mut rows = Vec::new();
    let mut cov = Vec::new();
    let mut labels = Vec::new();
    for g in 0..centers.len() {
        for _ in 0..n_per_group {
            rows.push(sample_gaussian_vec(&centers[g], 0.6, rng));
            cov.push(sample_gaussian_vec(&cov_centers[g], 1.0, rng));
            labels.push(g);
        }
    }
    Ok(CovariateData { data: Dataset::from_rows(&rows)?, covariates: cov, truth: Partition::from_labels(&labels) })
}

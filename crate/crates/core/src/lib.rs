//! Bayesian spanning-forest clustering.
//!
//! Data points are nodes of a random spanning tree rooted at an auxiliary
//! hub; deleting the hub leaves a forest whose components are the clusters.
//! The crate provides the model densities, a Gibbs sampler built on a
//! random-walk covering tree draw, matrix-tree edge marginals, posterior
//! summaries via normalized spectral clustering, and MST-cut baselines.

pub mod baselines;
pub mod datagen;
pub mod densities;
pub mod domain;
pub mod error;
pub mod io;
pub mod matrixtree;
pub mod mcmc;
pub mod posterior;
pub mod randkit;
pub mod spectral;

pub use domain::{partition_from_tree, validate_tree, AugmentedTree, Dataset, LogSimilarity, ModelState, Partition};
pub use error::{Error, Result};

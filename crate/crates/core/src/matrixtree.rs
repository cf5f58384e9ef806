//! Weighted spanning-tree totals, edge marginals and the eigenvector
//! comparison between the marginal matrix and the normalized Laplacian.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::gen_gaussian_mixture;
use crate::densities::{log_leaf_sq, RootDensity};
use crate::domain::{AugmentedTree, Dataset, LogSimilarity};
use crate::error::{Error, Result};
use crate::mcmc::{run_chain, ChainConfig};
use crate::randkit::seeded_rng;
use crate::spectral::{bottom_eigenvectors, normalized_laplacian, top_eigenvectors, SimilarityMatrix};

/// Largest number of nodes (hub included) [`enumerate_trees`] accepts.
pub const MAX_ENUMERATION_NODES: usize = 8;

/// Probability that each undirected edge appears in a tree drawn with
/// probability proportional to the product of its edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMarginals {
    m: DMatrix<f64>,
}

impl EdgeMarginals {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn nodes(&self) -> usize {
        self.m.nrows()
    }
}

// Shifted Laplacian L(exp(S - smax)) + J/p^2 and the shift used.
fn shifted_laplacian(s: &LogSimilarity) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let p = s.nodes();
    let shift = s.max_offdiag();
    let w = s.weights(shift);
    let mut l = -w.clone();
    for i in 0..p {
        l[(i, i)] = w.row(i).sum();
    }
    let jp = 1.0 / (p * p) as f64;
    l.add_scalar_mut(jp);
    let l = (&l + l.transpose()) * 0.5;
    (l, w, shift)
}

fn cholesky(l: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    l.cholesky()
        .ok_or_else(|| Error::Numerical("shifted Laplacian is not numerically positive definite".into()))
}

/// Log of the total weight of all spanning trees on the complete graph with
/// edge weights `exp(S)`.
pub fn count_weighted_trees_log(s: &LogSimilarity) -> Result<f64> {
    let (l, _, shift) = shifted_laplacian(s);
    let chol = cholesky(l)?;
    let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let total = logdet + s.n() as f64 * shift;
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numerical(format!("log tree total is {total}")))
    }
}

/// Closed-form edge marginals `M_ij = (O_ii + O_jj - 2 O_ij) A_ij` with
/// `O = (L + J/p^2)^{-1}`.
pub fn edge_marginals(s: &LogSimilarity) -> Result<EdgeMarginals> {
    let (l, w, _) = shifted_laplacian(s);
    let p = l.nrows();
    let omega = cholesky(l)?.inverse();
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let r = (omega[(i, i)] + omega[(j, j)] - 2.0 * omega[(i, j)]) * w[(i, j)];
            let r = r.clamp(0.0, 1.0);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite edge marginal".into()));
    }
    Ok(EdgeMarginals { m })
}

fn prufer_decode(seq: &[usize], p: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; p];
    for &x in seq {
        degree[x] += 1;
    }
    let mut edges = Vec::with_capacity(p - 1);
    for &x in seq {
        let leaf = (0..p).find(|&v| degree[v] == 1).expect("Prufer sequence always has a leaf");
        edges.push((leaf, x));
        degree[leaf] -= 1;
        degree[x] -= 1;
    }
    let last: Vec<usize> = (0..p).filter(|&v| degree[v] == 1).collect();
    edges.push((last[0], last[1]));
    edges
}

/// Every spanning tree on nodes `0..=n` with its log weight under `S`.
pub fn enumerate_trees(s: &LogSimilarity) -> Result<Vec<(AugmentedTree, f64)>> {
    let p = s.nodes();
    if p > MAX_ENUMERATION_NODES {
        return Err(Error::invalid(format!(
            "enumeration limited to {MAX_ENUMERATION_NODES} nodes, got {p}"
        )));
    }
    let n = p - 1;
    let len = p - 2;
    let count = p.pow(len as u32);
    let mut out = Vec::with_capacity(count);
    let mut seq = vec![0usize; len];
    for code in 0..count {
        let mut c = code;
        for slot in seq.iter_mut() {
            *slot = c % p;
            c /= p;
        }
        let edges = prufer_decode(&seq, p);
        let logw: f64 = edges.iter().map(|&(a, b)| s.get(a, b)).sum();
        out.push((AugmentedTree::from_edges(n, &edges)?, logw));
    }
    Ok(out)
}

/// Minimum over orthogonal `R` of `||U - V R||_F`.
pub fn procrustes_distance(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if u.shape() != v.shape() {
        return Err(Error::invalid(format!("shape mismatch: {:?} vs {:?}", u.shape(), v.shape())));
    }
    // R = W Z' from the SVD V'U = W S Z'; evaluating the residual directly
    // avoids the cancellation in sqrt(2K - 2 sum S)
    let svd = (v.transpose() * u).svd(true, true);
    let (w, zt) = match (svd.u, svd.v_t) {
        (Some(w), Some(zt)) => (w, zt),
        _ => return Err(Error::Numerical("SVD failed".into())),
    };
    Ok((u - v * (w * zt)).norm())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigencheckConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub k: usize,
    pub lambda: f64,
    pub alpha_sigma: f64,
    pub seed: u64,
}

impl Default for EigencheckConfig {
    fn default() -> Self {
        EigencheckConfig {
            n_grid: vec![10, 25, 50, 100, 200],
            replicates: 30,
            iterations: 200,
            burn_in: 100,
            k: 5,
            lambda: 0.5,
            alpha_sigma: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigencheckRow {
    pub n: usize,
    pub replicate: usize,
    pub distance: f64,
}

/// S built from posterior-mean `sigma_ij = E[s_i s_j]` and `gamma^2`.
pub fn posterior_mean_similarity(data: &Dataset, sigma: &DMatrix<f64>, gamma2: f64, lambda: f64) -> Result<LogSimilarity> {
    let n = data.n();
    let p = data.p();
    let root = RootDensity::new(p, gamma2);
    let mu = data.mean();
    let log_lambda = lambda.ln();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    for i in 1..=n {
        let r = root.eval_sq(crate::domain::sq_dist(data.row(i - 1), mu)) + log_lambda;
        m[(0, i)] = r;
        m[(i, 0)] = r;
        for j in (i + 1)..=n {
            let v = log_leaf_sq(data.sq_dist(i - 1, j - 1), p, sigma[(i - 1, j - 1)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    LogSimilarity::new(m)
}

/// One replicate: fit the model, then compare the top-`k` eigenvectors of
/// the edge-marginal matrix with the bottom-`k` eigenvectors of `N`.
pub fn eigencheck_replicate(n: usize, replicate: usize, cfg: &EigencheckConfig) -> Result<(f64, [f64; 2])> {
    let mut rng = seeded_rng(cfg.seed, ((n as u64) << 32) | replicate as u64);
    let means = [vec![0.0, 0.0], vec![2.0, 2.0], vec![4.0, 4.0]];
    let (data, _) = gen_gaussian_mixture(n, &means, &mut rng)?;
    let chain = ChainConfig {
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: 1,
        lambda: cfg.lambda,
        alpha_sigma: cfg.alpha_sigma,
        seed: cfg.seed,
    };
    let samples = run_chain(&data, &chain, None, &mut rng)?;
    let t = samples.len() as f64;
    let mut sigma = DMatrix::zeros(n, n);
    let mut gamma2 = 0.0;
    for smp in &samples {
        gamma2 += smp.gamma2 / t;
        for i in 0..n {
            for j in 0..n {
                sigma[(i, j)] += smp.sigma_tilde[i] * smp.sigma_tilde[j] / t;
            }
        }
    }
    let s = posterior_mean_similarity(&data, &sigma, gamma2, cfg.lambda)?;
    let m = edge_marginals(&s)?;
    let psi = top_eigenvectors(m.matrix(), cfg.k)?;
    let a = SimilarityMatrix::from_log_similarity(&s)?;
    let lap = normalized_laplacian(&a)?;
    let phi = bottom_eigenvectors(&lap, cfg.k)?;
    let dist = procrustes_distance(&psi.vectors, &phi.vectors)?;
    Ok((dist, [psi.orthonormality_error(), phi.orthonormality_error()]))
}

/// Runs every `(n, replicate)` cell of the grid in parallel. Each cell uses
/// its own generator stream, so the table does not depend on thread count.
pub fn eigencheck_experiment(cfg: &EigencheckConfig) -> Result<Vec<EigencheckRow>> {
    if cfg.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if let Some(&bad) = cfg.n_grid.iter().find(|&&n| n + 1 < cfg.k || n < 2) {
        return Err(Error::invalid(format!("grid size {bad} too small for k = {}", cfg.k)));
    }
    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, replicate)| {
            let (distance, _) = eigencheck_replicate(n, replicate, cfg)?;
            Ok(EigencheckRow { n, replicate, distance })
        })
        .collect()
}

/// Eigen-decomposition helper for symmetric matrices sorted by eigenvalue.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(nodes: usize) -> LogSimilarity {
        LogSimilarity::from_fn(nodes, |_, _| 0.0).unwrap()
    }

    #[test]
    fn cayley_counts() {
        assert!((count_weighted_trees_log(&unit(3)).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((count_weighted_trees_log(&unit(4)).unwrap() - 16f64.ln()).abs() < 1e-12);
        assert_eq!(enumerate_trees(&unit(2)).unwrap().len(), 1);
        assert_eq!(enumerate_trees(&unit(3)).unwrap().len(), 3);
        assert_eq!(enumerate_trees(&unit(4)).unwrap().len(), 16);
        assert_eq!(enumerate_trees(&unit(5)).unwrap().len(), 125);
        assert!(enumerate_trees(&unit(9)).is_err());
    }

    #[test]
    fn enumerated_trees_are_distinct() {
        let trees = enumerate_trees(&unit(6)).unwrap();
        let mut keys: Vec<Vec<usize>> = trees.iter().map(|(t, _)| t.parents().to_vec()).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 6usize.pow(4));
    }

    #[test]
    fn one_heavy_edge_on_k4() {
        let s = LogSimilarity::from_fn(4, |i, j| if (i, j) == (0, 1) { 2f64.ln() } else { 0.0 }).unwrap();
        let brute: f64 = enumerate_trees(&s).unwrap().iter().map(|(_, w)| w.exp()).sum();
        let got = count_weighted_trees_log(&s).unwrap().exp();
        assert!(((got - brute) / brute).abs() < 1e-12, "{got} vs {brute}");
        // 8 trees use edge (0,1): total 8*2 + 8
        assert!((brute - 24.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_marginals() {
        let m2 = edge_marginals(&unit(2)).unwrap();
        assert!((m2.get(0, 1) - 1.0).abs() < 1e-12);
        let m3 = edge_marginals(&unit(3)).unwrap();
        let m4 = edge_marginals(&unit(4)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 2.0 / 3.0 };
                assert!((m3.get(i, j) - want).abs() < 1e-12);
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((m4.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginals_invariant_to_shift() {
        let s = LogSimilarity::from_fn(5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0).unwrap();
        let t = LogSimilarity::from_fn(5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 302.0).unwrap();
        let a = edge_marginals(&s).unwrap();
        let b = edge_marginals(&t).unwrap();
        assert!((a.matrix() - b.matrix()).abs().max() < 1e-10);
        let d = count_weighted_trees_log(&s).unwrap() - count_weighted_trees_log(&t).unwrap();
        assert!((d - 4.0 * 300.0).abs() < 1e-9);
    }

    #[test]
    fn procrustes_examples() {
        let u = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(procrustes_distance(&u, &u).unwrap() < 1e-12);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!(procrustes_distance(&u, &(&u * r)).unwrap() < 1e-10);
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let e2 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!((procrustes_distance(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(procrustes_distance(&e1, &u).is_err());
    }

    #[test]
    fn eigencheck_small_grid() {
        let cfg = EigencheckConfig { n_grid: vec![12], replicates: 2, iterations: 30, burn_in: 15, ..Default::default() };
        let rows = eigencheck_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.distance >= 0.0 && r.distance.is_finite()));
        let (_, ortho) = eigencheck_replicate(12, 0, &cfg).unwrap();
        assert!(ortho[0] < 1e-8 && ortho[1] < 1e-8);
        let again = eigencheck_experiment(&cfg).unwrap();
        assert_eq!(rows, again);
    }
}

//! Log densities of the forest model, the log-similarity matrix built from
//! them, tree priors, and the covariate-informed tree prior adjustment.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::domain::{sq_dist, AugmentedTree, Dataset, LogSimilarity, ModelState};
use crate::error::{Error, Result};

/// Gaussian leaf log density `log f(y_i | y_j)` with variance `sigma_ij` per coordinate.
pub fn log_leaf(yi: &[f64], yj: &[f64], sigma_ij: f64) -> Result<f64> {
    if yi.len() != yj.len() {
        return Err(Error::DimensionMismatch { expected: yi.len(), found: yj.len() });
    }
    check_finite(yi)?;
    check_finite(yj)?;
    if !(sigma_ij > 0.0 && sigma_ij.is_finite()) {
        return Err(Error::invalid(format!("leaf variance must be positive, got {sigma_ij}")));
    }
    Ok(log_leaf_sq(sq_dist(yi, yj), yi.len(), sigma_ij))
}

#[inline]
pub(crate) fn log_leaf_sq(d2: f64, p: usize, sigma_ij: f64) -> f64 {
    -0.5 * p as f64 * (2.0 * PI * sigma_ij).ln() - d2 / (2.0 * sigma_ij)
}

/// Multivariate Cauchy root log density `log r(y_i)` with location `mu` and scale `sqrt(gamma2)`.
pub fn log_root(yi: &[f64], mu: &[f64], gamma2: f64) -> Result<f64> {
    if yi.len() != mu.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), found: yi.len() });
    }
    check_finite(yi)?;
    check_finite(mu)?;
    if !(gamma2 > 0.0 && gamma2.is_finite()) {
        return Err(Error::invalid(format!("gamma2 must be positive, got {gamma2}")));
    }
    Ok(RootDensity::new(yi.len(), gamma2).eval_sq(sq_dist(yi, mu)))
}

/// Cached normalizer of the Cauchy root density.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RootDensity {
    log_norm: f64,
    half_p1: f64,
    gamma2: f64,
}

impl RootDensity {
    pub(crate) fn new(p: usize, gamma2: f64) -> Self {
        let half_p1 = 0.5 * (1.0 + p as f64);
        let log_norm = ln_gamma(half_p1) - 0.5 * p as f64 * gamma2.ln() - half_p1 * PI.ln();
        RootDensity { log_norm, half_p1, gamma2 }
    }

    #[inline]
    pub(crate) fn eval_sq(&self, d2: f64) -> f64 {
        self.log_norm - self.half_p1 * (d2 / self.gamma2).ln_1p()
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("non-finite coordinate"))
    }
}

/// The log-similarity matrix of the posterior kernel: leaf log densities
/// between data nodes and `log r(y_i) + log lambda` on the hub row.
pub fn build_s(data: &Dataset, state: &ModelState) -> Result<LogSimilarity> {
    state.validate(data)?;
    let n = data.n();
    let p = data.p();
    let m = n + 1;
    let root = RootDensity::new(p, state.gamma2);
    let log_lambda = state.lambda.ln();
    let sig = &state.sigma_tilde;

    let row_values = |i: usize| -> Vec<f64> {
        // entries (i, j) for j > i, node indexing
        let mut out = Vec::with_capacity(m - i - 1);
        if i == 0 {
            for r in 0..n {
                out.push(root.eval_sq(sq_dist(data.row(r), &state.mu)) + log_lambda);
            }
        } else {
            let a = i - 1;
            let ya = data.row(a);
            for b in a + 1..n {
                out.push(log_leaf_sq(sq_dist(ya, data.row(b)), p, sig[a] * sig[b]));
            }
        }
        out
    };

    let rows: Vec<Vec<f64>> = if n >= 256 {
        (0..m).into_par_iter().map(row_values).collect()
    } else {
        (0..m).map(row_values).collect()
    };

    let mut s = DMatrix::zeros(m, m);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("log-similarity has non-finite entries".into()));
    }
    Ok(LogSimilarity::from_matrix_unchecked(s))
}

/// Unnormalized log posterior of a tree given `S`: the sum of `S` over tree edges.
pub fn log_posterior_tree(tree: &AugmentedTree, s: &LogSimilarity) -> Result<f64> {
    if tree.n() != s.n() {
        return Err(Error::DimensionMismatch { expected: s.n(), found: tree.n() });
    }
    Ok(tree.edges().map(|(a, b)| s.get(a, b)).sum())
}

/// Log of the CRP forest-process prior
/// `alpha^K Gamma(alpha) / Gamma(alpha + n) * prod_k Gamma(n_k) n_k^{-(n_k - 1)}`.
pub fn crp_forest_log_prior(tree: &AugmentedTree, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let part = tree.partition();
    let n = tree.n() as f64;
    let mut lp = part.k() as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n);
    for nk in part.sizes() {
        let nk = nk as f64;
        lp += ln_gamma(nk) - (nk - 1.0) * nk.ln();
    }
    Ok(lp)
}

/// Unnormalized geometric prior on the cluster count, `K log lambda`.
pub fn geometric_tree_log_prior(tree: &AugmentedTree, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(tree.num_clusters() as f64 * lambda.ln())
}

/// Covariates for the tree-based product-partition prior with
/// `Sigma_1 = Sigma_2 = eta * S_n`.
#[derive(Debug, Clone)]
pub struct CovariatePriorConfig {
    x: Vec<f64>,
    n: usize,
    m: usize,
    eta: f64,
    sn: DMatrix<f64>,
    // (4 Sigma_1)^{-1}
    precision4: DMatrix<f64>,
    // -1/2 log |2 pi (2 Sigma_1)|
    log_norm: f64,
}

/// Relative ridge added to the empirical covariance before inversion.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

impl CovariatePriorConfig {
    /// Uses the empirical covariance of the (centered) covariate rows.
    pub fn new(rows: &[Vec<f64>], eta: f64) -> Result<Self> {
        let (x, n, m) = centered(rows)?;
        let mut sn = DMatrix::zeros(m, m);
        for r in x.chunks_exact(m) {
            for a in 0..m {
                for b in 0..m {
                    sn[(a, b)] += r[a] * r[b];
                }
            }
        }
        sn /= (n.max(2) - 1) as f64;
        Self::build(x, n, m, eta, sn)
    }

    /// Uses a caller-supplied covariance `S_n`.
    pub fn with_covariance(rows: &[Vec<f64>], eta: f64, sn: DMatrix<f64>) -> Result<Self> {
        let (x, n, m) = centered(rows)?;
        if sn.nrows() != m || sn.ncols() != m {
            return Err(Error::DimensionMismatch { expected: m, found: sn.nrows() });
        }
        Self::build(x, n, m, eta, sn)
    }

    fn build(x: Vec<f64>, n: usize, m: usize, eta: f64, sn: DMatrix<f64>) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        let sym = (&sn + sn.transpose()) * 0.5;
        let ridge = COVARIANCE_RIDGE * sym.diagonal().mean();
        let sigma1 = (&sym + DMatrix::identity(m, m) * ridge) * eta;
        let chol = Cholesky::new(sigma1.clone())
            .ok_or_else(|| Error::Numerical("covariate covariance is singular after regularization".into()))?;
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        if !logdet.is_finite() {
            return Err(Error::Numerical("covariate covariance is singular after regularization".into()));
        }
        let precision4 = chol.inverse() / 4.0;
        let log_norm = -0.5 * (m as f64 * (4.0 * PI).ln() + logdet);
        Ok(CovariatePriorConfig { x, n, m, eta, sn: sym, precision4, log_norm })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sn
    }

    fn row(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.x[i * self.m..(i + 1) * self.m])
    }

    fn quad(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.precision4 * v)[(0, 0)]
    }

    /// `log f0(x_i; x_j)` for data rows `i`, `j`.
    pub fn log_f0(&self, i: usize, j: usize) -> f64 {
        self.log_norm - self.quad(&(self.row(i) - self.row(j)))
    }

    /// `log r0(x_i)` for data row `i`.
    pub fn log_r0(&self, i: usize) -> f64 {
        self.log_norm - self.quad(&self.row(i))
    }

    /// Additive adjustment to `S` in node indexing (hub row holds `log r0`).
    pub fn delta(&self) -> DMatrix<f64> {
        let nodes = self.n + 1;
        let mut d = DMatrix::zeros(nodes, nodes);
        for i in 0..self.n {
            let r = self.log_r0(i);
            d[(0, i + 1)] = r;
            d[(i + 1, 0)] = r;
            for j in (i + 1)..self.n {
                let f = self.log_f0(i, j);
                d[(i + 1, j + 1)] = f;
                d[(j + 1, i + 1)] = f;
            }
        }
        d
    }
}

fn centered(rows: &[Vec<f64>]) -> Result<(Vec<f64>, usize, usize)> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::invalid("covariate matrix is empty"));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("covariate rows have unequal lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariates must be finite"));
    }
    let mut mean = vec![0.0; m];
    for r in rows {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / n as f64;
        }
    }
    let x = rows
        .iter()
        .flat_map(|r| r.iter().zip(&mean).map(|(v, c)| v - c))
        .collect();
    Ok((x, n, m))
}

/// Adds the covariate tree-prior terms to every entry of `S`.
pub fn covariate_adjust_s(s: &LogSimilarity, cfg: &CovariatePriorConfig) -> Result<LogSimilarity> {
    if cfg.n() != s.n() {
        return Err(Error::DimensionMismatch { expected: s.n(), found: cfg.n() });
    }
    Ok(LogSimilarity::from_matrix_unchecked(s.matrix() + cfg.delta()))
}

//! Normalized spectral clustering and the normalized-cut loss.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};

use crate::domain::{LogSimilarity, Partition};
use crate::error::{Error, Result};
use crate::matrixtree::sorted_eigen;
use crate::randkit::seeded_rng;

pub const KMEANS_RESTARTS: usize = 20;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_REL_TOL: f64 = 1e-9;

/// Nonnegative symmetric affinity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    a: DMatrix<f64>,
}

impl SimilarityMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m || m == 0 {
            return Err(Error::invalid(format!("similarity must be square and nonempty, got {:?}", a.shape())));
        }
        for i in 0..m {
            if a[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("similarity diagonal entry {i} is {}", a[(i, i)])));
            }
            for j in 0..m {
                let v = a[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!("similarity entry ({i},{j}) = {v}")));
                }
                if (v - a[(j, i)]).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::invalid(format!("similarity not symmetric at ({i},{j})")));
                }
            }
        }
        let a = (&a + a.transpose()) * 0.5;
        Ok(SimilarityMatrix { a })
    }

    /// `exp(S)` off the diagonal, rescaled by `exp(-max S)`; the common
    /// factor cancels in `N` and in the normalized cut.
    pub fn from_log_similarity(s: &LogSimilarity) -> Result<Self> {
        SimilarityMatrix::new(s.weights(s.max_offdiag()))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.a.row_iter().map(|r| r.sum()).collect()
    }
}

/// Eigenvectors as columns with their eigenvalues, in the requested order.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
}

impl EigenBasis {
    /// Largest entry of `|V'V - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.vectors.ncols();
        (self.vectors.transpose() * &self.vectors - DMatrix::identity(k, k)).abs().max()
    }
}

/// `N = D^{-1/2} (D - A) D^{-1/2}`.
pub fn normalized_laplacian(a: &SimilarityMatrix) -> Result<DMatrix<f64>> {
    let d = a.degrees();
    if let Some(i) = d.iter().position(|&x| x <= 0.0) {
        return Err(Error::invalid(format!("row {i} of the similarity matrix has zero degree")));
    }
    let inv: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let m = a.len();
    Ok(DMatrix::from_fn(m, m, |i, j| {
        let off = a.matrix()[(i, j)] * inv[i] * inv[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    }))
}

// Largest-magnitude entry positive; the first index wins ties.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for (r, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() + 1e-12 {
                best = r;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn pick_eigen(n: &DMatrix<f64>, k: usize, top: bool) -> Result<EigenBasis> {
    let m = n.nrows();
    if n.ncols() != m {
        return Err(Error::invalid("eigen-decomposition needs a square matrix"));
    }
    if k == 0 || k > m {
        return Err(Error::invalid(format!("requested {k} eigenvectors of a {m}x{m} matrix")));
    }
    if n.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    let (values, vectors) = sorted_eigen(n);
    let cols: Vec<usize> = if top { (0..k).map(|c| m - 1 - c).collect() } else { (0..k).collect() };
    let mut v = DMatrix::from_fn(m, k, |r, c| vectors[(r, cols[c])]);
    fix_signs(&mut v);
    Ok(EigenBasis { vectors: v, values: cols.iter().map(|&c| values[c]).collect() })
}

/// The `k` eigenvectors with smallest eigenvalues, ascending.
pub fn bottom_eigenvectors(n: &DMatrix<f64>, k: usize) -> Result<EigenBasis> {
    pick_eigen(n, k, false)
}

/// The `k` eigenvectors with largest eigenvalues, descending.
pub fn top_eigenvectors(m: &DMatrix<f64>, k: usize) -> Result<EigenBasis> {
    pick_eigen(m, k, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub partition: Partition,
    pub cost: f64,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = sq(point, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_once<R: Rng + ?Sized>(pts: &[Vec<f64>], k: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let m = pts.len();
    let mut centers: Vec<Vec<f64>> = vec![pts[rng.random_range(0..m)].clone()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // guard against rounding landing on an existing centre
            if d2[pick] == 0.0 {
                d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick)
            } else {
                pick
            }
        } else {
            rng.random_range(0..m)
        };
        centers.push(pts[idx].clone());
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min(sq(p, &centers[centers.len() - 1]));
        }
    }

    let dim = pts[0].len();
    let mut labels = vec![0usize; m];
    let mut cost = f64::INFINITY;
    for _ in 0..KMEANS_MAX_ITER {
        let mut new_cost = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            labels[i] = c;
            new_cost += d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in pts.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centre
                let far = (0..m)
                    .max_by(|&a, &b| sq(&pts[a], &centers[labels[a]]).total_cmp(&sq(&pts[b], &centers[labels[b]])).then(b.cmp(&a)))
                    .unwrap();
                centers[c] = pts[far].clone();
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let converged = cost.is_finite() && (cost - new_cost).abs() <= KMEANS_REL_TOL * cost.max(f64::MIN_POSITIVE);
        cost = new_cost;
        if converged {
            break;
        }
    }
    // final assignment against the last centres
    let mut final_cost = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let (c, d) = nearest(p, &centers);
        labels[i] = c;
        final_cost += d;
    }
    (labels, final_cost)
}

/// Best of `restarts` K-means++ runs on the rows of `rows`. Each restart
/// draws from its own stream seeded from `rng`; the lowest cost wins and
/// ties go to the earliest restart.
pub fn kmeans<R: RngCore + ?Sized>(rows: &DMatrix<f64>, k: usize, restarts: usize, rng: &mut R) -> Result<KMeansFit> {
    let m = rows.nrows();
    if m == 0 || rows.ncols() == 0 {
        return Err(Error::invalid("k-means needs a nonempty input"));
    }
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={m}")));
    }
    if rows.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("k-means input has non-finite entries"));
    }
    let pts: Vec<Vec<f64>> = rows.row_iter().map(|r| r.iter().copied().collect()).collect();
    let root = rng.next_u64();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..restarts.max(1) {
        let mut sub = seeded_rng(root, r as u64);
        let (labels, cost) = kmeans_once(&pts, k, &mut sub);
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((labels, cost));
        }
    }
    let (labels, cost) = best.unwrap();
    Ok(KMeansFit { partition: Partition::from_labels(&labels), cost })
}

/// `sum_k cut(V_k) / vol(V_k)`.
pub fn normalized_cut_loss(partition: &Partition, a: &SimilarityMatrix) -> Result<f64> {
    let m = a.len();
    if partition.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: partition.len() });
    }
    let k = partition.k();
    let mut cut = vec![0.0; k];
    let mut vol = vec![0.0; k];
    for i in 0..m {
        let ci = partition.label(i) - 1;
        for j in 0..m {
            let w = a.matrix()[(i, j)];
            vol[ci] += w;
            if partition.label(j) - 1 != ci {
                cut[ci] += w;
            }
        }
    }
    let mut loss = 0.0;
    for c in 0..k {
        if vol[c] <= 0.0 {
            return Err(Error::invalid(format!("cluster {} has zero total degree", c + 1)));
        }
        loss += cut[c] / vol[c];
    }
    Ok(loss)
}

/// Bottom-`k` eigenvectors of `N`, rows scaled to unit length, then
/// K-means with [`KMEANS_RESTARTS`] restarts.
pub fn spectral_cluster<R: RngCore + ?Sized>(a: &SimilarityMatrix, k: usize, rng: &mut R) -> Result<Partition> {
    let m = a.len();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={m}")));
    }
    if k == 1 {
        return Ok(Partition::single_cluster(m));
    }
    let lap = normalized_laplacian(a)?;
    let mut z = bottom_eigenvectors(&lap, k)?.vectors;
    for mut row in z.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(kmeans(&z, k, KMEANS_RESTARTS, rng)?.partition)
}

//! Posterior summaries: co-assignment matrix, distribution of K, the
//! normalized-cut point estimate and Hungarian-matched accuracy.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Partition;
use crate::error::{Error, Result};
use crate::mcmc::McmcSample;
use crate::spectral::{spectral_cluster, SimilarityMatrix};

/// Off-diagonal floor applied when some point is never co-clustered with any
/// other, so the normalized Laplacian of the co-assignment matrix exists.
pub const PSM_DEGREE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub psm: DMatrix<f64>,
    pub k_hist: BTreeMap<usize, usize>,
    pub k_mode: usize,
    pub point_estimate: Partition,
}

/// Serializable view of a summary (the matrix goes to its own file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub samples: usize,
    pub k_hist: BTreeMap<usize, usize>,
    pub k_mode: usize,
    pub k_used: usize,
    pub cluster_sizes: Vec<usize>,
}

fn check_nonempty(samples: &[McmcSample]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::invalid("no posterior samples"))?;
    let n = first.tree.n();
    if let Some(bad) = samples.iter().find(|s| s.tree.n() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.tree.n() });
    }
    Ok(n)
}

/// Fraction of samples placing each pair in the same cluster; the diagonal is 1.
pub fn coassignment(samples: &[McmcSample]) -> Result<DMatrix<f64>> {
    let n = check_nonempty(samples)?;
    let labels: Vec<Vec<usize>> = samples.iter().map(|s| s.tree.partition().labels().to_vec()).collect();
    let t = samples.len() as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut counts = vec![0u64; n];
            for l in &labels {
                let li = l[i];
                for (j, c) in counts.iter_mut().enumerate() {
                    *c += (l[j] == li) as u64;
                }
            }
            counts.into_iter().map(|c| c as f64 / t).collect()
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn k_histogram(samples: &[McmcSample]) -> Result<BTreeMap<usize, usize>> {
    check_nonempty(samples)?;
    let mut hist = BTreeMap::new();
    for s in samples {
        *hist.entry(s.tree.num_clusters()).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Most frequent K; ties go to the smaller K.
pub fn k_mode(samples: &[McmcSample]) -> Result<usize> {
    Ok(mode_of(&k_histogram(samples)?))
}

pub fn mode_of(hist: &BTreeMap<usize, usize>) -> usize {
    let mut best = (0, 0);
    for (&k, &c) in hist {
        if c > best.1 {
            best = (k, c);
        }
    }
    best.0
}

/// Spectral clustering of the co-assignment matrix with its diagonal zeroed.
pub fn point_estimate<R: RngCore + ?Sized>(psm: &DMatrix<f64>, k_hat: usize, rng: &mut R) -> Result<Partition> {
    let n = psm.nrows();
    if psm.ncols() != n {
        return Err(Error::invalid("co-assignment matrix must be square"));
    }
    if k_hat == 0 || k_hat > n {
        return Err(Error::invalid(format!("k = {k_hat} must lie in 1..={n}")));
    }
    let mut a = psm.clone();
    a.fill_diagonal(0.0);
    if a.iter().any(|v| !(0.0..=1.0 + 1e-12).contains(v)) {
        return Err(Error::invalid("co-assignment entries must lie in [0, 1]"));
    }
    let isolated = a.row_iter().any(|r| r.sum() <= 0.0);
    if isolated {
        a.add_scalar_mut(PSM_DEGREE_FLOOR);
        a.fill_diagonal(0.0);
    }
    spectral_cluster(&SimilarityMatrix::new(a)?, k_hat, rng)
}

/// Co-assignment, K histogram and point estimate; `k_override` replaces the
/// posterior mode of K for the point estimate.
pub fn summarize<R: RngCore + ?Sized>(samples: &[McmcSample], k_override: Option<usize>, rng: &mut R) -> Result<PosteriorSummary> {
    let psm = coassignment(samples)?;
    let k_hist = k_histogram(samples)?;
    let k_mode = mode_of(&k_hist);
    let point_estimate = point_estimate(&psm, k_override.unwrap_or(k_mode), rng)?;
    Ok(PosteriorSummary { psm, k_hist, k_mode, point_estimate })
}

impl PosteriorSummary {
    pub fn report(&self) -> SummaryReport {
        SummaryReport {
            samples: self.k_hist.values().sum(),
            k_hist: self.k_hist.clone(),
            k_mode: self.k_mode,
            k_used: self.point_estimate.k(),
            cluster_sizes: self.point_estimate.sizes(),
        }
    }
}

/// Maximum-weight assignment of rows to columns of a square matrix
/// (shortest augmenting paths with potentials). Returns `col_of_row`.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    // minimize cost = -w; 1-based arrays as in the textbook formulation
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -w[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Accuracy after relabeling `estimate` by the optimal one-to-one matching
/// to `truth` on the zero-padded contingency table.
pub fn hungarian_accuracy(estimate: &Partition, truth: &Partition) -> Result<f64> {
    let n = truth.len();
    if estimate.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: estimate.len() });
    }
    if n == 0 {
        return Err(Error::invalid("empty partitions"));
    }
    let k = estimate.k().max(truth.k());
    let mut table = vec![vec![0.0; k]; k];
    for i in 0..n {
        table[estimate.label(i) - 1][truth.label(i) - 1] += 1.0;
    }
    let assign = max_weight_assignment(&table);
    let matched: f64 = assign.iter().enumerate().map(|(r, &c)| table[r][c]).sum();
    Ok(matched / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AugmentedTree;
    use crate::randkit::seeded_rng;
    use rand::Rng;

    fn sample(parent: Vec<usize>) -> McmcSample {
        let n = parent.len() - 1;
        McmcSample { iteration: 0, tree: AugmentedTree::from_parents(parent).unwrap(), sigma_tilde: vec![1.0; n], gamma2: 1.0 }
    }

    #[test]
    fn coassignment_examples() {
        let s = sample(vec![0, 0, 1, 0]);
        let psm = coassignment(&[s.clone(), s.clone()]).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(psm, want);
        let apart = sample(vec![0, 0, 0, 0]);
        let psm = coassignment(&[s, apart]).unwrap();
        assert_eq!(psm[(0, 1)], 0.5);
        assert_eq!(psm[(0, 2)], 0.0);
        assert!(coassignment(&[]).is_err());
    }

    #[test]
    fn k_mode_ties_to_smaller() {
        let k2 = sample(vec![0, 0, 1, 0]);
        let k3 = sample(vec![0, 0, 0, 0]);
        assert_eq!(k_mode(&[k2.clone(), k2.clone(), k3.clone()]).unwrap(), 2);
        assert_eq!(k_mode(&[k3.clone(), k2.clone(), k3.clone(), k2.clone()]).unwrap(), 2);
        assert!(k_mode(&[]).is_err());
    }

    #[test]
    fn point_estimate_blocks() {
        let labels = [1, 2, 1, 3, 2, 3, 1];
        let psm = DMatrix::from_fn(7, 7, |i, j| (labels[i] == labels[j]) as u8 as f64);
        let p = point_estimate(&psm, 3, &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(p, Partition::from_labels(&labels));
        assert_eq!(point_estimate(&psm, 1, &mut seeded_rng(0, 0)).unwrap().k(), 1);
        assert!(point_estimate(&psm, 8, &mut seeded_rng(0, 0)).is_err());
    }

    #[test]
    fn point_estimate_with_singleton_row() {
        let labels = [1, 1, 2, 2, 3];
        let psm = DMatrix::from_fn(5, 5, |i, j| (labels[i] == labels[j]) as u8 as f64);
        let p = point_estimate(&psm, 3, &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(p, Partition::from_labels(&labels));
    }

    #[test]
    fn hungarian_examples() {
        let truth = Partition::from_labels(&[1, 1, 2, 2]);
        assert_eq!(hungarian_accuracy(&truth, &truth).unwrap(), 1.0);
        let perm = Partition::from_labels(&[2, 2, 1, 1]);
        assert_eq!(hungarian_accuracy(&perm, &truth).unwrap(), 1.0);
        let est = Partition::from_labels(&[1, 1, 1, 2]);
        assert_eq!(hungarian_accuracy(&est, &truth).unwrap(), 0.75);
        assert!(hungarian_accuracy(&Partition::single_cluster(3), &truth).is_err());
    }

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    proptest::proptest! {
        #[test]
        fn hungarian_is_optimal(seed in 0u64..500, ke in 1usize..6, kt in 1usize..6) {
            let mut g = seeded_rng(seed, 0);
            let n = 15;
            let est = Partition::from_labels(&(0..n).map(|_| g.random_range(0..ke)).collect::<Vec<_>>());
            let truth = Partition::from_labels(&(0..n).map(|_| g.random_range(0..kt)).collect::<Vec<_>>());
            let k = est.k().max(truth.k());
            let mut best = 0usize;
            for perm in permutations(k) {
                let hits = (0..n).filter(|&i| perm[est.label(i) - 1] == truth.label(i) - 1).count();
                best = best.max(hits);
            }
            let acc = hungarian_accuracy(&est, &truth).unwrap();
            proptest::prop_assert!((acc - best as f64 / n as f64).abs() < 1e-12);
        }

        #[test]
        fn psm_depends_only_on_partition(seed in 0u64..200) {
            let mut g = seeded_rng(seed, 0);
            let n = 6;
            let samples: Vec<McmcSample> = (0..5).map(|_| {
                let mut parent = vec![0usize; n + 1];
                for i in 2..=n {
                    parent[i] = g.random_range(0..i);
                }
                sample(parent)
            }).collect();
            let psm = coassignment(&samples).unwrap();
            proptest::prop_assert!((&psm - psm.transpose()).abs().max() == 0.0);
            proptest::prop_assert!(psm.diagonal().iter().all(|&d| d == 1.0));
            let mut reversed = samples.clone();
            reversed.reverse();
            proptest::prop_assert_eq!(&psm, &coassignment(&reversed).unwrap());
            // a different forest with the same blocks, rooted at the last member
            let restarred: Vec<McmcSample> = samples.iter().map(|smp| {
                let mut parent = vec![0usize; n + 1];
                for block in smp.tree.partition().members() {
                    let root = *block.last().unwrap() + 1;
                    for &i in &block {
                        if i + 1 != root {
                            parent[i + 1] = root;
                        }
                    }
                }
                sample(parent)
            }).collect();
            proptest::prop_assert_eq!(psm, coassignment(&restarred).unwrap());
        }
    }
}

//! Shared domain types: the observation matrix, the hub-rooted augmented
//! tree, partitions, the continuous model state, and the log-similarity
//! matrix that couples them.
//!
//! Node numbering follows the augmented-tree convention throughout the
//! crate: node `0` is the auxiliary hub and node `i >= 1` is data row `i - 1`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x p` matrix of observations with the summary statistics the
/// empirical priors need.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    p: usize,
    mean: Vec<f64>,
    sigma2_hat: f64,
    nn_dist: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major values.
    pub fn new(values: Vec<f64>, n: usize, p: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 observations, got {n}")));
        }
        if p < 1 {
            return Err(Error::invalid("need at least one column"));
        }
        if values.len() != n * p {
            return Err(Error::DimensionMismatch { expected: n * p, found: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                pos / p,
                pos % p
            )));
        }

        let mut mean = vec![0.0; p];
        for row in values.chunks_exact(p) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let ss: f64 = values
            .chunks_exact(p)
            .map(|row| sq_dist(row, &mean))
            .sum();
        let sigma2_hat = ss / (n * p) as f64;

        let mut nn_dist = vec![f64::INFINITY; n];
        for i in 0..n {
            let yi = &values[i * p..(i + 1) * p];
            for j in (i + 1)..n {
                let d2 = sq_dist(yi, &values[j * p..(j + 1) * p]);
                if d2 > 0.0 {
                    let d = d2.sqrt();
                    if d < nn_dist[i] {
                        nn_dist[i] = d;
                    }
                    if d < nn_dist[j] {
                        nn_dist[j] = d;
                    }
                }
            }
        }
        if nn_dist.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid(
                "all observations are identical; nearest distinct neighbor distance is undefined",
            ));
        }

        Ok(Dataset { values, n, p, mean, sigma2_hat, nn_dist })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::invalid(format!("row {i} has {} columns, expected {p}", r.len())));
        }
        Dataset::new(rows.concat(), rows.len(), p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column means.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Pooled per-coordinate variance `sum_i |y_i - ybar|^2 / (n p)`.
    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    /// Euclidean distance from row `i` to its nearest row with different values.
    pub fn nearest_distinct_distance(&self, i: usize) -> f64 {
        self.nn_dist[i]
    }

    /// Scale of the Gamma prior on the local scale of row `i`:
    /// nearest distinct distance divided by `sqrt(p)`.
    pub fn mu_sigma(&self, i: usize) -> f64 {
        self.nn_dist[i] / (self.p as f64).sqrt()
    }

    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j))
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A spanning tree over `{0, 1, ..., n}` stored as a parent array, where
/// node 0 is the hub. Children of the hub are cluster roots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugmentedTree {
    // parent[0] is a placeholder and always 0.
    parent: Vec<usize>,
}

impl AugmentedTree {
    /// Validates a parent array of length `n + 1`; entry 0 is ignored.
    pub fn from_parents(mut parent: Vec<usize>) -> Result<Self> {
        if parent.len() < 2 {
            return Err(Error::invalid("parent array must cover the hub and at least one node"));
        }
        let n = parent.len() - 1;
        parent[0] = 0;
        for i in 1..=n {
            let pi = parent[i];
            if pi == i {
                return Err(Error::SelfLoop { node: i });
            }
            if pi > n {
                return Err(Error::ParentOutOfRange { node: i, parent: pi, n });
            }
        }

        let children = children_lists(&parent);
        let mut seen = vec![false; n + 1];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            for &c in &children[v] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        if let Some(node) = seen.iter().position(|s| !s) {
            return Err(Error::Unreachable { node });
        }
        Ok(AugmentedTree { parent })
    }

    /// Orients an undirected edge list away from the hub.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if edges.len() != n {
            return Err(Error::invalid(format!(
                "a spanning tree on {} nodes has {n} edges, got {}",
                n + 1,
                edges.len()
            )));
        }
        let mut adj = vec![Vec::new(); n + 1];
        for &(a, b) in edges {
            if a > n || b > n {
                return Err(Error::ParentOutOfRange { node: a.min(b), parent: a.max(b), n });
            }
            if a == b {
                return Err(Error::SelfLoop { node: a });
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parent = vec![usize::MAX; n + 1];
        parent[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if w == parent[v] && v != 0 {
                    continue;
                }
                if parent[w] != usize::MAX || w == 0 {
                    return Err(Error::Cycle { node: w });
                }
                parent[w] = v;
                queue.push_back(w);
            }
        }
        if let Some(node) = parent.iter().position(|&p| p == usize::MAX) {
            return Err(Error::Unreachable { node });
        }
        Ok(AugmentedTree { parent })
    }

    /// Number of data nodes (excluding the hub).
    pub fn n(&self) -> usize {
        self.parent.len() - 1
    }

    /// Parent of node `i >= 1`.
    pub fn parent(&self, i: usize) -> usize {
        self.parent[i]
    }

    /// Raw parent array; entry 0 is a placeholder.
    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    /// Cluster count, i.e. the hub degree.
    pub fn num_clusters(&self) -> usize {
        self.parent[1..].iter().filter(|&&p| p == 0).count()
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.parent.len()).filter(move |&i| self.parent[i] == 0)
    }

    pub fn is_root(&self, i: usize) -> bool {
        i >= 1 && self.parent[i] == 0
    }

    /// Edges `(parent, child)` for every non-hub node.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..self.parent.len()).map(move |i| (self.parent[i], i))
    }

    /// Undirected edges normalized to `(min, max)` and sorted.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.edges().map(|(a, b)| (a.min(b), a.max(b))).collect();
        e.sort_unstable();
        e
    }

    /// Non-hub neighbors of every node, indexed by node.
    pub fn data_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.parent.len()];
        for (a, b) in self.edges() {
            if a != 0 {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }

    pub fn partition(&self) -> Partition {
        partition_from_tree(self)
    }
}

fn children_lists(parent: &[usize]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); parent.len()];
    for (i, &p) in parent.iter().enumerate().skip(1) {
        children[p].push(i);
    }
    children
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    parent: Vec<Option<usize>>,
}

impl Serialize for AugmentedTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let parent = std::iter::once(None)
            .chain(self.parent[1..].iter().map(|&p| Some(p)))
            .collect();
        TreeJson { parent }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AugmentedTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TreeJson::deserialize(d)?;
        let mut parent = Vec::with_capacity(raw.parent.len());
        for (i, p) in raw.parent.into_iter().enumerate() {
            match (i, p) {
                (0, _) => parent.push(0),
                (_, Some(p)) => parent.push(p),
                (i, None) => {
                    return Err(serde::de::Error::custom(format!("missing parent for node {i}")))
                }
            }
        }
        AugmentedTree::from_parents(parent).map_err(serde::de::Error::custom)
    }
}

/// Cluster labels `1..=K` for data rows, canonicalized so that clusters are
/// numbered in order of their lowest-index member.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels by first occurrence.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len() + 1;
                *map.entry(l.clone()).or_insert(next)
            })
            .collect();
        Partition { labels, k: map.len() }
    }

    pub fn single_cluster(n: usize) -> Self {
        Partition { labels: vec![1; n], k: usize::from(n > 0) }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l - 1] += 1;
        }
        sizes
    }

    /// Member indices of each cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l - 1].push(i);
        }
        m
    }
}

/// Connected components of the tree after deleting the hub.
pub fn partition_from_tree(tree: &AugmentedTree) -> Partition {
    let n = tree.n();
    let parent = tree.parents();
    let mut root_of = vec![usize::MAX; n + 1];
    for start in 1..=n {
        if root_of[start] != usize::MAX {
            continue;
        }
        // Climb until a node with a known root or a direct child of the hub.
        let mut path = Vec::new();
        let mut v = start;
        let root = loop {
            if root_of[v] != usize::MAX {
                break root_of[v];
            }
            path.push(v);
            if parent[v] == 0 {
                break v;
            }
            v = parent[v];
        };
        for u in path {
            root_of[u] = root;
        }
    }
    Partition::from_labels(&root_of[1..])
}

/// Validates a parent array and returns the tree.
pub fn validate_tree(parent: Vec<usize>) -> Result<AugmentedTree> {
    AugmentedTree::from_parents(parent)
}

/// Continuous parameters of the forest model plus its fixed hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// Local scales; the leaf variance of edge `(i, j)` is `sigma_tilde[i] * sigma_tilde[j]`.
    pub sigma_tilde: Vec<f64>,
    /// Squared root scale.
    pub gamma2: f64,
    /// Root location.
    pub mu: Vec<f64>,
    /// Cauchy mixing variables; only entries of current roots are meaningful.
    pub u_gamma: Vec<f64>,
    pub lambda: f64,
    pub alpha_sigma: f64,
}

impl ModelState {
    /// Prior-mean initialization: `sigma_tilde_i = alpha * mu_sigma_i`,
    /// `gamma^2 = sigma2_hat`, `u = 1`, `mu = ybar`.
    pub fn initial(data: &Dataset, lambda: f64, alpha_sigma: f64) -> Result<Self> {
        let state = ModelState {
            sigma_tilde: (0..data.n()).map(|i| alpha_sigma * data.mu_sigma(i)).collect(),
            gamma2: data.sigma2_hat(),
            mu: data.mean().to_vec(),
            u_gamma: vec![1.0; data.n()],
            lambda,
            alpha_sigma,
        };
        state.validate(data)?;
        Ok(state)
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.sigma_tilde.len() != data.n() {
            return Err(Error::DimensionMismatch { expected: data.n(), found: self.sigma_tilde.len() });
        }
        if self.u_gamma.len() != data.n() {
            return Err(Error::DimensionMismatch { expected: data.n(), found: self.u_gamma.len() });
        }
        if self.mu.len() != data.p() {
            return Err(Error::DimensionMismatch { expected: data.p(), found: self.mu.len() });
        }
        if let Some(i) = self.sigma_tilde.iter().position(|&s| !pos(s)) {
            return Err(Error::invalid(format!("sigma_tilde[{i}] = {} is not positive", self.sigma_tilde[i])));
        }
        if let Some(i) = self.u_gamma.iter().position(|&s| !pos(s)) {
            return Err(Error::invalid(format!("u_gamma[{i}] = {} is not positive", self.u_gamma[i])));
        }
        if !pos(self.gamma2) || !pos(self.lambda) || !pos(self.alpha_sigma) {
            return Err(Error::invalid("gamma2, lambda and alpha_sigma must be positive"));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mu must be finite"));
        }
        Ok(())
    }

    /// Leaf variance of the edge between data rows `i` and `j`.
    pub fn sigma_ij(&self, i: usize, j: usize) -> f64 {
        self.sigma_tilde[i] * self.sigma_tilde[j]
    }
}

/// Symmetric `(n+1) x (n+1)` matrix of log edge weights with a zero diagonal;
/// row and column 0 belong to the hub.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSimilarity {
    s: DMatrix<f64>,
}

impl LogSimilarity {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        let m = s.nrows();
        if m < 2 || s.ncols() != m {
            return Err(Error::invalid(format!("log-similarity must be square with >= 2 nodes, got {}x{}", m, s.ncols())));
        }
        for i in 0..m {
            if s[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is not zero")));
            }
            for j in (i + 1)..m {
                let (a, b) = (s[(i, j)], s[(j, i)]);
                if !a.is_finite() {
                    return Err(Error::invalid(format!("entry ({i}, {j}) is not finite")));
                }
                if a != b {
                    return Err(Error::invalid(format!("entry ({i}, {j}) is not symmetric")));
                }
            }
        }
        Ok(LogSimilarity { s })
    }

    /// Builds from the strict upper triangle, mirroring it.
    pub fn from_fn(nodes: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut s = DMatrix::zeros(nodes, nodes);
        for i in 0..nodes {
            for j in (i + 1)..nodes {
                let v = f(i, j);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        LogSimilarity::new(s)
    }

    pub(crate) fn from_matrix_unchecked(s: DMatrix<f64>) -> Self {
        LogSimilarity { s }
    }

    /// Number of nodes including the hub.
    pub fn nodes(&self) -> usize {
        self.s.nrows()
    }

    /// Number of data nodes.
    pub fn n(&self) -> usize {
        self.s.nrows() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.s
    }

    /// Largest off-diagonal entry.
    pub fn max_offdiag(&self) -> f64 {
        let m = self.nodes();
        let mut best = f64::NEG_INFINITY;
        for i in 0..m {
            for j in (i + 1)..m {
                best = best.max(self.s[(i, j)]);
            }
        }
        best
    }

    /// Off-diagonal weights `exp(S - shift)` with a zero diagonal.
    pub fn weights(&self, shift: f64) -> DMatrix<f64> {
        let m = self.nodes();
        DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { (self.s[(i, j)] - shift).exp() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_chains_off_hub() {
        let t = AugmentedTree::from_parents(vec![0, 0, 1, 0, 3]).unwrap();
        let p = partition_from_tree(&t);
        assert_eq!(p.labels(), &[1, 1, 2, 2]);
        assert_eq!(p.k(), 2);
        assert_eq!(t.num_clusters(), 2);
    }

    #[test]
    fn single_node_tree() {
        let t = AugmentedTree::from_parents(vec![0, 0]).unwrap();
        assert_eq!(partition_from_tree(&t).labels(), &[1]);
        assert_eq!(t.num_clusters(), 1);
    }

    #[test]
    fn star_gives_singletons() {
        let t = AugmentedTree::from_parents(vec![0, 0, 0, 0]).unwrap();
        let p = t.partition();
        assert_eq!(p.labels(), &[1, 2, 3]);
        assert_eq!(p.k(), 3);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(validate_tree(vec![0, 2, 1]), Err(Error::Unreachable { node: 1 })));
        assert!(matches!(validate_tree(vec![0, 1]), Err(Error::SelfLoop { node: 1 })));
        assert!(matches!(validate_tree(vec![0, 5, 0]), Err(Error::ParentOutOfRange { .. })));
        let t = validate_tree(vec![0, 0, 1]).unwrap();
        assert_eq!(t.num_clusters(), 1);
    }

    #[test]
    fn chain_through_reordered_nodes() {
        // 1 -> 3 -> 2 -> 0
        let t = validate_tree(vec![0, 3, 0, 2]).unwrap();
        assert_eq!(t.num_clusters(), 1);
        assert_eq!(t.undirected_edges(), vec![(0, 2), (1, 3), (2, 3)]);
        assert_eq!(t.partition().labels(), &[1, 1, 1]);
    }

    #[test]
    fn from_edges_orients_and_rejects_cycles() {
        let t = AugmentedTree::from_edges(3, &[(3, 1), (0, 2), (2, 3)]).unwrap();
        assert_eq!(t.parents(), &[0, 3, 0, 2]);
        assert!(matches!(
            AugmentedTree::from_edges(3, &[(1, 2), (2, 3), (3, 1)]),
            Err(Error::Cycle { .. }) | Err(Error::Unreachable { .. })
        ));
    }

    #[test]
    fn tree_json_round_trip() {
        let t = validate_tree(vec![0, 0, 1, 0, 3]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"parent":[null,0,1,0,3]}"#);
        let back: AugmentedTree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<AugmentedTree>(r#"{"parent":[null,2,1]}"#).is_err());
    }

    #[test]
    fn dataset_statistics() {
        let d = Dataset::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.mean(), &[1.0, 4.0 / 3.0]);
        // duplicates skip each other
        assert_eq!(d.nearest_distinct_distance(0), 5.0);
        assert_eq!(d.nearest_distinct_distance(2), 5.0);
        assert!((d.mu_sigma(0) - 5.0 / 2f64.sqrt()).abs() < 1e-15);
        let ss = 2.0 * (1.0 + 16.0 / 9.0) + (4.0 + 64.0 / 9.0);
        assert!((d.sigma2_hat() - ss / 6.0).abs() < 1e-14);
    }

    #[test]
    fn dataset_rejects_degenerate_input() {
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0]]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![f64::NAN]]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn log_similarity_validation() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        assert!(LogSimilarity::new(m.clone()).is_err());
        m[(1, 0)] = 1.0;
        assert!(LogSimilarity::new(m.clone()).is_ok());
        m[(2, 2)] = 0.5;
        assert!(LogSimilarity::new(m).is_err());
    }

    /// Random valid tree: each node i picks a parent among {0} ∪ earlier nodes
    /// of a random permutation.
    fn arb_tree() -> impl Strategy<Value = AugmentedTree> {
        (1usize..12)
            .prop_flat_map(|n| {
                (Just(n), Just((1..=n).collect::<Vec<_>>()).prop_shuffle(), proptest::collection::vec(any::<u32>(), n))
            })
            .prop_map(|(n, order, picks)| {
                let mut parent = vec![0; n + 1];
                for (pos, &node) in order.iter().enumerate() {
                    let choice = picks[pos] as usize % (pos + 1);
                    parent[node] = if choice == 0 { 0 } else { order[choice - 1] };
                }
                AugmentedTree::from_parents(parent).unwrap()
            })
    }

    proptest! {
        #[test]
        fn partition_is_canonical_and_consistent(tree in arb_tree()) {
            let p = partition_from_tree(&tree);
            let n = tree.n();
            prop_assert_eq!(p.len(), n);
            prop_assert_eq!(p.k(), tree.num_clusters());
            prop_assert!(p.k() >= 1 && p.k() <= n);
            prop_assert_eq!(p.sizes().iter().sum::<usize>(), n);
            // first occurrence order
            let mut max_seen = 0;
            for &l in p.labels() {
                prop_assert!(l <= max_seen + 1);
                max_seen = max_seen.max(l);
            }
            // tree edges never cross clusters
            for (a, b) in tree.edges() {
                if a != 0 {
                    prop_assert_eq!(p.label(a - 1), p.label(b - 1));
                }
            }
            prop_assert_eq!(partition_from_tree(&tree), p.clone());
            let re = AugmentedTree::from_edges(n, &tree.undirected_edges()).unwrap();
            prop_assert_eq!(re, tree);
        }
    }
}

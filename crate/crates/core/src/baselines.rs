//! Euclidean minimum spanning tree and the MST-cut (single-linkage) partitioner.

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Partition};
use crate::error::{Error, Result};

/// Spanning tree over data rows `0..n` with edge lengths. Edges are stored
/// as `(i, j, length)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTree {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedTree {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n == 0 || edges.len() + 1 != n {
            return Err(Error::invalid(format!("a spanning tree on {n} nodes needs {} edges", n.saturating_sub(1))));
        }
        let mut uf = UnionFind::new(n);
        let mut norm = Vec::with_capacity(edges.len());
        for (a, b, w) in edges {
            if a >= n || b >= n || a == b || !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("bad edge ({a}, {b}, {w})")));
            }
            if !uf.union(a, b) {
                return Err(Error::invalid(format!("edge ({a}, {b}) closes a cycle")));
            }
            norm.push((a.min(b), a.max(b), w));
        }
        Ok(WeightedTree { n, edges: norm })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

/// Prim's algorithm on the complete Euclidean graph, `O(n^2)`. Among edges
/// of equal length the lexicographically smallest `(i, j)` is taken first.
pub fn mst(data: &Dataset) -> WeightedTree {
    let n = data.n();
    let mut in_tree = vec![false; n];
    let mut key = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    in_tree[0] = true;
    for v in 1..n {
        key[v] = data.sq_dist(0, v).sqrt();
    }
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut best: Option<(f64, (usize, usize), usize)> = None;
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let e = (from[v].min(v), from[v].max(v));
            let better = match best {
                None => true,
                Some((k, be, _)) => key[v] < k || (key[v] == k && e < be),
            };
            if better {
                best = Some((key[v], e, v));
            }
        }
        let (len, (a, b), v) = best.expect("a node remains outside the tree");
        in_tree[v] = true;
        edges.push((a, b, len));
        for w in 0..n {
            if !in_tree[w] {
                let d = data.sq_dist(v, w).sqrt();
                let cand = (v.min(w), v.max(w));
                let cur = (from[w].min(w), from[w].max(w));
                if d < key[w] || (d == key[w] && cand < cur) {
                    key[w] = d;
                    from[w] = v;
                }
            }
        }
    }
    WeightedTree { n, edges }
}

// Edge positions sorted longest first; ties by (i, j).
fn longest_first(tree: &WeightedTree) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tree.edges.len()).collect();
    order.sort_by(|&x, &y| {
        let (ex, ey) = (tree.edges[x], tree.edges[y]);
        ey.2.total_cmp(&ex.2).then((ex.0, ex.1).cmp(&(ey.0, ey.1)))
    });
    order
}

/// Result of cutting edges from a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    pub partition: Partition,
    pub cut_lengths: Vec<f64>,
}

fn cut_edges(tree: &WeightedTree, removed: usize) -> CutResult {
    let order = longest_first(tree);
    let cut: Vec<usize> = order[..removed].to_vec();
    let mut uf = UnionFind::new(tree.n);
    for &e in &order[removed..] {
        let (a, b, _) = tree.edges[e];
        uf.union(a, b);
    }
    let roots: Vec<usize> = (0..tree.n).map(|i| uf.find(i)).collect();
    CutResult { partition: Partition::from_labels(&roots), cut_lengths: cut.iter().map(|&e| tree.edges[e].2).collect() }
}

/// Removes the `k - 1` longest edges and returns the components.
pub fn mst_cut(tree: &WeightedTree, k: usize) -> Result<Partition> {
    mst_cut_detailed(tree, k).map(|c| c.partition)
}

pub fn mst_cut_detailed(tree: &WeightedTree, k: usize) -> Result<CutResult> {
    if k == 0 || k > tree.n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", tree.n)));
    }
    Ok(cut_edges(tree, k - 1))
}

/// Removes the longest `round(fraction * (n - 1))` edges.
pub fn mst_cut_fraction(tree: &WeightedTree, fraction: f64) -> Result<CutResult> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} must lie in [0, 1]")));
    }
    let removed = (fraction * tree.edges.len() as f64).round() as usize;
    Ok(cut_edges(tree, removed))
}

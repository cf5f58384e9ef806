//! Gibbs sampler for the forest model: a random-walk covering draw of the
//! tree followed by conjugate updates of the scales.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::densities::{build_s, CovariatePriorConfig};
use crate::domain::{sq_dist, AugmentedTree, Dataset, LogSimilarity, ModelState};
use crate::error::{Error, Result};
use crate::randkit::{sample_gig_counted, sample_inverse_gamma, seeded_rng, GigParams, GigStats};

/// Step budget of one covering walk.
pub const MAX_WALK_STEPS: u64 = 1_000_000_000;

/// Smallest `chi` (relative to the prior scale) used in the scale update;
/// only binds when every tree neighbour of a node is an exact duplicate.
pub const DUPLICATE_CHI_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub lambda: f64,
    pub alpha_sigma: f64,
    pub seed: u64,
}

impl ChainConfig {
    /// Defaults: burn-in of half the chain, no thinning, `lambda = alpha_sigma = 0.5`.
    pub fn new(iterations: usize) -> Self {
        ChainConfig { iterations, burn_in: iterations / 2, thin: 1, lambda: 0.5, alpha_sigma: 0.5, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "need 0 <= burn_in < iterations, got burn_in={} iterations={}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        for (name, v) in [("lambda", self.lambda), ("alpha_sigma", self.alpha_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSample {
    pub iteration: usize,
    pub tree: AugmentedTree,
    pub sigma_tilde: Vec<f64>,
    pub gamma2: f64,
}

/// Counters accumulated over a chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub walk_steps: u64,
    pub gig_proposals: u64,
    pub gig_accepted: u64,
    pub chi_floor_hits: u64,
}

/// Per-row alias tables for the walk transition `Pr(j | i) ∝ exp(S_ij)`.
struct TransitionTables {
    m: usize,
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl TransitionTables {
    fn new(s: &LogSimilarity) -> Result<Self> {
        let m = s.nodes();
        let mut prob = vec![0.0; m * m];
        let mut alias = vec![0u32; m * m];
        let mut w = vec![0.0; m];
        let mut small = Vec::with_capacity(m);
        let mut large = Vec::with_capacity(m);
        for i in 0..m {
            let row = s.matrix().row(i);
            let mx = (0..m).filter(|&j| j != i).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if !mx.is_finite() {
                return Err(Error::Numerical(format!("row {i} of S has no finite entry")));
            }
            let mut total = 0.0;
            for j in 0..m {
                w[j] = if j == i { 0.0 } else { (row[j] - mx).exp() };
                total += w[j];
            }
            let scale = m as f64 / total;
            small.clear();
            large.clear();
            for (j, wj) in w.iter_mut().enumerate() {
                *wj *= scale;
                if *wj < 1.0 {
                    small.push(j);
                } else {
                    large.push(j);
                }
            }
            let (p, a) = (&mut prob[i * m..(i + 1) * m], &mut alias[i * m..(i + 1) * m]);
            while let (Some(&sm), Some(&lg)) = (small.last(), large.last()) {
                small.pop();
                p[sm] = w[sm];
                a[sm] = lg as u32;
                w[lg] -= 1.0 - w[sm];
                if w[lg] < 1.0 {
                    large.pop();
                    small.push(lg);
                }
            }
            for &j in large.iter().chain(small.iter()) {
                p[j] = if w[j] > 0.0 { 1.0 } else { 0.0 };
                a[j] = j as u32;
            }
            if p[i] > 0.0 || a[i] as usize == i {
                // should be unreachable; keep the walk off the diagonal regardless
                let best = (0..m).filter(|&j| j != i).max_by(|&x, &y| row[x].total_cmp(&row[y])).unwrap();
                p[i] = 0.0;
                a[i] = best as u32;
            }
        }
        Ok(TransitionTables { m, prob, alias })
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let col = rng.random_range(0..self.m);
        let k = i * self.m + col;
        if rng.random::<f64>() < self.prob[k] {
            col
        } else {
            self.alias[k] as usize
        }
    }
}

/// Random-walk covering draw of a spanning tree with probability
/// proportional to `prod exp(S_ij)` over its edges.
pub fn sample_tree_cover<R: Rng + ?Sized>(s: &LogSimilarity, rng: &mut R) -> Result<AugmentedTree> {
    sample_tree_cover_counted(s, rng).map(|(t, _)| t)
}

/// Same as [`sample_tree_cover`], also returning the number of walk steps.
pub fn sample_tree_cover_counted<R: Rng + ?Sized>(s: &LogSimilarity, rng: &mut R) -> Result<(AugmentedTree, u64)> {
    let m = s.nodes();
    let tables = TransitionTables::new(s)?;
    let mut parent = vec![0usize; m];
    let mut visited = vec![false; m];
    visited[0] = true;
    let mut remaining = m - 1;
    let mut cur = 0usize;
    let mut steps = 0u64;
    while remaining > 0 {
        if steps >= MAX_WALK_STEPS {
            return Err(Error::BudgetExceeded { context: "covering walk", budget: MAX_WALK_STEPS });
        }
        let next = tables.step(cur, rng);
        steps += 1;
        if !visited[next] {
            visited[next] = true;
            parent[next] = cur;
            remaining -= 1;
        }
        cur = next;
    }
    Ok((AugmentedTree::from_parents(parent)?, steps))
}

fn sigma_gig(i: usize, tree_nbrs: &[usize], data: &Dataset, state: &ModelState) -> (GigParams, bool) {
    let mu = data.mu_sigma(i);
    let mut chi = 0.0;
    for &j in tree_nbrs {
        chi += data.sq_dist(i, j) / state.sigma_tilde[j];
    }
    let deg = tree_nbrs.len();
    let lam = state.alpha_sigma - 0.5 * (data.p() * deg) as f64;
    let floor = DUPLICATE_CHI_FLOOR * mu;
    let hit = deg > 0 && chi < floor;
    if hit {
        chi = floor;
    }
    (GigParams { psi: 2.0 / mu, chi, lam }, hit)
}

/// Parameters of the full conditional of `sigma_tilde_i` (data index `i`,
/// zero-based) given the tree.
pub fn sigma_tilde_conditional(i: usize, tree: &AugmentedTree, data: &Dataset, state: &ModelState) -> GigParams {
    let nbrs = tree.data_neighbors();
    let zero_based: Vec<usize> = nbrs[i + 1].iter().map(|&j| j - 1).collect();
    sigma_gig(i, &zero_based, data, state).0
}

/// Draws `sigma_tilde_i` for data node `i` (1-based node index, as in the tree).
pub fn gibbs_sigma_tilde<R: Rng + ?Sized>(
    i: usize,
    tree: &AugmentedTree,
    data: &Dataset,
    state: &ModelState,
    rng: &mut R,
) -> Result<f64> {
    if i == 0 || i > data.n() {
        return Err(Error::invalid(format!("node {i} is not a data node")));
    }
    let g = sigma_tilde_conditional(i - 1, tree, data, state);
    sample_gig_counted(g, rng, &mut GigStats::default())
}

/// Inverse-gamma parameters of `u_i` for root node `i` (1-based).
pub fn u_gamma_conditional(i: usize, data: &Dataset, state: &ModelState) -> (f64, f64) {
    let p = data.p() as f64;
    let d2 = sq_dist(data.row(i - 1), &state.mu);
    (0.5 * (1.0 + p), 0.5 + d2 / (2.0 * state.gamma2))
}

pub fn gibbs_u_gamma<R: Rng + ?Sized>(i: usize, data: &Dataset, state: &ModelState, rng: &mut R) -> Result<f64> {
    if i == 0 || i > data.n() {
        return Err(Error::invalid(format!("node {i} is not a data node")));
    }
    let (shape, scale) = u_gamma_conditional(i, data, state);
    sample_inverse_gamma(shape, scale, rng)
}

/// Inverse-gamma parameters of `gamma^2` given the roots and their `u`.
pub fn gamma2_conditional(tree: &AugmentedTree, data: &Dataset, state: &ModelState) -> (f64, f64) {
    let p = data.p() as f64;
    let k = tree.num_clusters() as f64;
    let mut scale = data.sigma2_hat();
    for r in tree.roots() {
        scale += sq_dist(data.row(r - 1), &state.mu) / (2.0 * state.u_gamma[r - 1]);
    }
    (2.0 + 0.5 * k * p, scale)
}

pub fn gibbs_gamma2<R: Rng + ?Sized>(tree: &AugmentedTree, data: &Dataset, state: &ModelState, rng: &mut R) -> Result<f64> {
    let (shape, scale) = gamma2_conditional(tree, data, state);
    sample_inverse_gamma(shape, scale, rng)
}

/// Runs the chain with a generator seeded from `cfg.seed`.
pub fn run_chain_seeded(data: &Dataset, cfg: &ChainConfig, covariates: Option<&CovariatePriorConfig>) -> Result<Vec<McmcSample>> {
    run_chain(data, cfg, covariates, &mut seeded_rng(cfg.seed, 0))
}

pub fn run_chain<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &ChainConfig,
    covariates: Option<&CovariatePriorConfig>,
    rng: &mut R,
) -> Result<Vec<McmcSample>> {
    run_chain_with_stats(data, cfg, covariates, rng).map(|(s, _)| s)
}

/// One Gibbs sweep per iteration: rebuild `S`, draw the tree, update the
/// scales in index order, refresh `u` at the roots, then `gamma^2`.
pub fn run_chain_with_stats<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &ChainConfig,
    covariates: Option<&CovariatePriorConfig>,
    rng: &mut R,
) -> Result<(Vec<McmcSample>, ChainStats)> {
    cfg.validate()?;
    let delta: Option<DMatrix<f64>> = match covariates {
        Some(c) if c.n() != data.n() => {
            return Err(Error::DimensionMismatch { expected: data.n(), found: c.n() });
        }
        Some(c) => Some(c.delta()),
        None => None,
    };
    let n = data.n();
    let mut state = ModelState::initial(data, cfg.lambda, cfg.alpha_sigma)?;
    let mut stats = ChainStats::default();
    let mut gig = GigStats::default();
    let mut out = Vec::with_capacity((cfg.iterations - cfg.burn_in).div_ceil(cfg.thin));

    for iter in 0..cfg.iterations {
        let mut s = build_s(data, &state)?;
        if let Some(d) = &delta {
            s = LogSimilarity::from_matrix_unchecked(s.into_matrix() + d);
        }
        let (tree, steps) = sample_tree_cover_counted(&s, rng)?;
        stats.walk_steps += steps;

        let nbrs = tree.data_neighbors();
        let mut local = Vec::new();
        for i in 0..n {
            local.clear();
            local.extend(nbrs[i + 1].iter().map(|&j| j - 1));
            let (g, hit) = sigma_gig(i, &local, data, &state);
            stats.chi_floor_hits += hit as u64;
            state.sigma_tilde[i] = sample_gig_counted(g, rng, &mut gig)?;
        }
        for i in 0..n {
            state.u_gamma[i] = if tree.is_root(i + 1) {
                let (shape, scale) = u_gamma_conditional(i + 1, data, &state);
                sample_inverse_gamma(shape, scale, rng)?
            } else {
                1.0
            };
        }
        state.gamma2 = gibbs_gamma2(&tree, data, &state, rng)?;

        if iter >= cfg.burn_in && (iter - cfg.burn_in).is_multiple_of(cfg.thin) {
            out.push(McmcSample { iteration: iter, tree, sigma_tilde: state.sigma_tilde.clone(), gamma2: state.gamma2 });
        }
    }
    stats.gig_proposals = gig.proposals;
    stats.gig_accepted = gig.accepted;
    Ok((out, stats))
}

mod common;

use std::collections::HashMap;

use common::chi2_pvalue;
use rand::Rng;
use spanforest::densities::{crp_forest_log_prior, log_posterior_tree};
use spanforest::matrixtree::{count_weighted_trees_log, edge_marginals, enumerate_trees};
use spanforest::mcmc::sample_tree_cover;
use spanforest::randkit::{forest_process_log_prob, seeded_rng, simulate_forest_process};
use spanforest::{AugmentedTree, LogSimilarity};
use statrs::function::gamma::ln_gamma;

fn random_s(nodes: usize, seed: u64) -> LogSimilarity {
    let mut rng = seeded_rng(seed, 77);
    LogSimilarity::from_fn(nodes, |_, _| rng.random::<f64>() * 4.0 - 2.0).unwrap()
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn kirchhoff_and_marginals_match_enumeration() {
    for seed in 0..60u64 {
        let nodes = 3 + (seed as usize % 4);
        let s = random_s(nodes, seed);
        let trees = enumerate_trees(&s).unwrap();
        let brute = log_sum_exp(trees.iter().map(|(_, w)| *w));
        let kirchhoff = count_weighted_trees_log(&s).unwrap();
        assert!(((kirchhoff - brute) / brute.abs().max(1.0)).abs() < 1e-10, "{kirchhoff} vs {brute}");

        let m = edge_marginals(&s).unwrap();
        let mut brute_m = vec![vec![0.0; nodes]; nodes];
        for (t, w) in &trees {
            let p = (w - brute).exp();
            for (a, b) in t.undirected_edges() {
                brute_m[a][b] += p;
                brute_m[b][a] += p;
            }
        }
        let mut total = 0.0;
        for i in 0..nodes {
            assert!(m.matrix().row(i).sum() >= 1.0 - 1e-10);
            for j in 0..nodes {
                assert!((m.get(i, j) - brute_m[i][j]).abs() < 1e-10);
                total += m.get(i, j);
            }
        }
        assert!((total - 2.0 * (nodes - 1) as f64).abs() < 1e-9);
    }
}

#[test]
fn enumeration_sum_matches_posterior_edge_sums() {
    let s = random_s(5, 3);
    for (t, w) in enumerate_trees(&s).unwrap() {
        assert!((log_posterior_tree(&t, &s).unwrap() - w).abs() < 1e-12);
    }
}

fn tree_frequencies(s: &LogSimilarity, draws: usize, seed: u64) -> HashMap<Vec<(usize, usize)>, u64> {
    let mut rng = seeded_rng(seed, 0);
    let mut counts = HashMap::new();
    for _ in 0..draws {
        let t = sample_tree_cover(s, &mut rng).unwrap();
        *counts.entry(t.undirected_edges()).or_insert(0u64) += 1;
    }
    counts
}

#[test]
fn cover_walk_matches_matrix_tree_law_on_k4() {
    let s = LogSimilarity::from_fn(4, |i, j| match (i, j) {
        (0, 1) => 1.2,
        (0, 2) => -0.7,
        (0, 3) => 0.1,
        (1, 2) => 0.9,
        (1, 3) => -1.5,
        _ => 0.4,
    })
    .unwrap();
    let trees = enumerate_trees(&s).unwrap();
    let z = count_weighted_trees_log(&s).unwrap();
    let counts = tree_frequencies(&s, 100_000, 21);
    let observed: Vec<u64> = trees.iter().map(|(t, _)| *counts.get(&t.undirected_edges()).unwrap_or(&0)).collect();
    let probs: Vec<f64> = trees.iter().map(|(_, w)| (w - z).exp()).collect();
    let p = chi2_pvalue(&observed, &probs);
    assert!(p > 0.01, "chi-square p = {p}");
}

#[test]
fn cover_walk_edge_frequencies_match_marginals() {
    let s = random_s(6, 8);
    let m = edge_marginals(&s).unwrap();
    let draws = 100_000;
    let mut hits = vec![vec![0u64; 6]; 6];
    let mut rng = seeded_rng(4, 0);
    for _ in 0..draws {
        for (a, b) in sample_tree_cover(&s, &mut rng).unwrap().undirected_edges() {
            hits[a][b] += 1;
        }
    }
    for i in 0..6 {
        for j in (i + 1)..6 {
            let p = m.get(i, j);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let f = hits[i][j] as f64 / draws as f64;
            // 15 edges; 3.5 SE keeps the family-wise false alarm rate small
            assert!((f - p).abs() < 3.5 * se + 1e-12, "edge ({i},{j}): {f} vs {p}");
        }
    }
}

#[test]
fn tree_only_gibbs_with_frozen_parameters() {
    // repeated sweeps of the tree step alone, parameters held fixed
    let s = random_s(4, 99);
    let trees = enumerate_trees(&s).unwrap();
    let z = count_weighted_trees_log(&s).unwrap();
    let counts = tree_frequencies(&s, 100_000, 5);
    let observed: Vec<u64> = trees.iter().map(|(t, _)| *counts.get(&t.undirected_edges()).unwrap_or(&0)).collect();
    let probs: Vec<f64> = trees.iter().map(|(t, _)| (log_posterior_tree(t, &s).unwrap() - z).exp()).collect();
    assert!(chi2_pvalue(&observed, &probs) > 0.01);
}

fn augmented_trees(n: usize) -> Vec<AugmentedTree> {
    let zero = LogSimilarity::from_fn(n + 1, |_, _| 0.0).unwrap();
    enumerate_trees(&zero).unwrap().into_iter().map(|(t, _)| t).collect()
}

// sequential probability recomputed from the attachment rule
fn sequential_prob(t: &AugmentedTree, alpha: f64) -> f64 {
    let mut p = 1.0;
    for i in 1..=t.n() {
        let denom = (i - 1) as f64 + alpha;
        let par = t.parent(i);
        p *= if par == 0 {
            alpha / denom
        } else if par < i {
            1.0 / denom
        } else {
            0.0
        };
    }
    p
}

#[test]
fn forest_process_exact_sequential_law() {
    for alpha in [0.5, 1.0, 2.0] {
        let trees = augmented_trees(3);
        let probs: Vec<f64> = trees.iter().map(|t| sequential_prob(t, alpha)).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (t, &p) in trees.iter().zip(&probs) {
            let lp = forest_process_log_prob(t, alpha);
            assert!(if p == 0.0 { lp == f64::NEG_INFINITY } else { (lp.exp() - p).abs() < 1e-14 });
        }
        let mut rng = seeded_rng(17, (alpha * 10.0) as u64);
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        for _ in 0..100_000 {
            *counts.entry(simulate_forest_process(3, alpha, &mut rng).unwrap().parents().to_vec()).or_insert(0) += 1;
        }
        let observed: Vec<u64> = trees.iter().map(|t| *counts.get(t.parents()).unwrap_or(&0)).collect();
        let p = chi2_pvalue(&observed, &probs);
        assert!(p > 0.01, "alpha {alpha}: p = {p}");
    }
}

#[test]
fn forest_process_partition_law_is_the_crp() {
    // the induced partition follows the Chinese restaurant process, which is
    // also the partition marginal of the closed-form forest prior
    for alpha in [0.5, 1.0, 2.0] {
        let n = 4;
        let trees = augmented_trees(n);
        let mut by_partition: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
        for t in &trees {
            let e = by_partition.entry(t.partition().labels().to_vec()).or_insert((0.0, 0.0));
            e.0 += sequential_prob(t, alpha);
            e.1 += crp_forest_log_prior(t, alpha).unwrap().exp();
        }
        for (labels, (seq, closed)) in &by_partition {
            let part = spanforest::Partition::from_labels(labels);
            let mut eppf = part.k() as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n as f64);
            for s in part.sizes() {
                eppf += ln_gamma(s as f64);
            }
            assert!((seq - eppf.exp()).abs() < 1e-12, "{labels:?}");
            assert!((closed - eppf.exp()).abs() < 1e-12, "{labels:?}");
        }
    }
}

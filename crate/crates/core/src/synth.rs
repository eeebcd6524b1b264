//! Seeded synthetic graphs for tests, benchmarks and demos.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, GraphStore, NodeId};
use crate::rng;

pub const TWO_BLOCK_CATEGORIES: [&str; 2] = ["Theory", "Systems"];

#[derive(Debug, Clone, PartialEq)]
pub struct TwoBlockConfig {
    pub nodes: usize,
    pub p_within: f64,
    pub p_across: f64,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TwoBlockConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            p_within: 0.2,
            p_across: 0.02,
            feature_dim: 8,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

/// Block of node `v` in an `n`-node two-block graph: first half 0, rest 1.
pub fn block_of(v: NodeId, n: usize) -> usize {
    usize::from(v >= n / 2)
}

/// Two-block stochastic block model with one-hot class features plus
/// Gaussian noise, block labels, category names and short node texts.
pub fn two_block_graph(cfg: &TwoBlockConfig) -> Result<GraphStore> {
    if cfg.nodes < 2 || cfg.feature_dim < 2 {
        return Err(Error::invalid("two-block graph needs >= 2 nodes and feature_dim >= 2"));
    }
    for p in [cfg.p_within, cfg.p_across] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
        }
    }
    let n = cfg.nodes;
    let mut rng = rng::rng_for(&[rng::TAG_SYNTH, 0, cfg.seed]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block_of(u, n) == block_of(v, n) { cfg.p_within } else { cfg.p_across };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut values = Vec::with_capacity(n * cfg.feature_dim);
    for v in 0..n {
        for d in 0..cfg.feature_dim {
            let indicator = if d == block_of(v, n) { 1.0 } else { 0.0 };
            values.push(indicator + noise.sample(&mut rng));
        }
    }
    let labels = (0..n).map(|v| Some(block_of(v, n))).collect();
    let texts = (0..n)
        .map(|v| format!("{} methods for problem {}", TWO_BLOCK_CATEGORIES[block_of(v, n)].to_lowercase(), v % 7))
        .collect();
    GraphStore::from_edges(n, edges)?
        .with_features(FeatureMatrix::new(n, cfg.feature_dim, values)?)?
        .with_labels(labels, TWO_BLOCK_CATEGORIES.iter().map(|s| s.to_string()).collect())?
        .with_texts(texts)
}

/// Erdős–Rényi `G(n, p)`.
pub fn gnp(n: usize, p: f64, seed: u64) -> Result<GraphStore> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = rng::rng_for(&[rng::TAG_SYNTH, 1, seed]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    GraphStore::from_edges(n, edges)
}

/// About `n * avg_degree / 2` uniformly drawn node pairs; duplicates and
/// self-pairs are dropped, so the realized degree is marginally lower.
pub fn sparse_random_graph(n: usize, avg_degree: f64, seed: u64) -> Result<GraphStore> {
    if n < 2 || !(avg_degree >= 0.0) {
        return Err(Error::invalid("sparse graph needs n >= 2 and a nonnegative degree"));
    }
    let m = (n as f64 * avg_degree / 2.0).round() as usize;
    let mut rng = rng::rng_for(&[rng::TAG_SYNTH, 2, seed]);
    let edges: Vec<(NodeId, NodeId)> = (0..m)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
        .filter(|(u, v)| u != v)
        .collect();
    GraphStore::from_edges(n, edges)
}

/// Standard normal features.
pub fn random_features(n: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = rng::rng_for(&[rng::TAG_SYNTH, 3, seed]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    FeatureMatrix::new(n, dim, (0..n * dim).map(|_| normal.sample(&mut rng)).collect())
}

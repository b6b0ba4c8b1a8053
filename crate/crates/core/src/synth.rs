//! Stochastic-block-model generator for desk-scale ground-truth experiments.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::rng::RngState;
use crate::sparse::SparseMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Magnitude of the block-specific coordinates of each block mean.
    pub mean_separation: f64,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.nodes_per_block == 0 || self.feature_dim == 0 {
            return Err(Error::arg(
                "blocks, nodes_per_block, feature_dim must be positive".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::arg(
                "edge probabilities must lie in [0,1]".to_string(),
            ));
        }
        if self.p_out > self.p_in {
            return Err(Error::arg("p_out must not exceed p_in".to_string()));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }
}

/// Block mean for block `b`: `separation` on the coordinates congruent to `b`
/// modulo the block count, zero elsewhere.
fn block_mean(cfg: &SbmConfig, b: usize) -> Vec<f64> {
    (0..cfg.feature_dim)
        .map(|j| {
            if j % cfg.blocks == b {
                cfg.mean_separation
            } else {
                0.0
            }
        })
        .collect()
}

pub fn generate_sbm(cfg: &SbmConfig) -> Result<AttributedGraph> {
    cfg.validate()?;
    let n = cfg.num_nodes();
    let mut rng = RngState::new(cfg.seed);

    let block_of = |i: usize| i / cfg.nodes_per_block;

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block_of(i) == block_of(j) {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.next_f64() < p {
                edges.push((i, j));
            }
        }
    }
    let adjacency = SparseMatrix::from_undirected_edges(n, &edges)?;

    let mut features = DenseMatrix::zeros(n, cfg.feature_dim);
    for i in 0..n {
        let mean = block_mean(cfg, block_of(i));
        let row = features.row_mut(i);
        for (v, m) in row.iter_mut().zip(&mean) {
            *v = m + cfg.noise_scale * rng.next_normal();
        }
    }

    let labels: Vec<usize> = (0..n).map(block_of).collect();
    AttributedGraph::new(features, adjacency, Some(labels))
}

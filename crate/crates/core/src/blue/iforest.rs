//! Isolation forest over fixed-length feature vectors. Scores follow the
//! standard construction: shorter average isolation paths mean more
//! anomalous, mapped through `2^(-E[h]/c(n))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IsoTree {
    nodes: Vec<TreeNode>,
}

impl IsoTree {
    fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { size } => return depth + average_path_length(*size),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Expected unsuccessful-search path length in a BST of n points.
fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    if n == 2 {
        return 1.0;
    }
    let nf = n as f64;
    let harmonic = (nf - 1.0).ln() + 0.577_215_664_901_532_9;
    2.0 * harmonic - 2.0 * (nf - 1.0) / nf
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationForest {
    trees: Vec<IsoTree>,
    feature_dim: usize,
    normalization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub subsample: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            subsample: 256,
        }
    }
}

impl IsolationForest {
    /// Fit on row-major data (`n x feature_dim`). The subsample shrinks to
    /// the dataset size when the data is smaller.
    pub fn fit(data: &[Vec<f64>], cfg: &ForestConfig, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(CoreError::Empty("isolation forest training set".into()));
        }
        let feature_dim = data[0].len();
        if data.iter().any(|r| r.len() != feature_dim) {
            return Err(CoreError::DimMismatch("ragged isolation forest data".into()));
        }
        let sub = cfg.subsample.min(data.len()).max(2);
        let max_depth = (sub as f64).log2().ceil() as usize;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(cfg.n_trees);
        for _ in 0..cfg.n_trees {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            // Partial Fisher-Yates: the first `sub` entries become the sample.
            for i in 0..sub {
                let j = rng.random_range(i..data.len());
                idx.swap(i, j);
            }
            let sample: Vec<&Vec<f64>> = idx[..sub].iter().map(|&i| &data[i]).collect();
            let mut nodes = Vec::new();
            build_tree(&sample, 0, max_depth, feature_dim, &mut rng, &mut nodes);
            trees.push(IsoTree { nodes });
        }
        Ok(IsolationForest {
            trees,
            feature_dim,
            normalization: average_path_length(sub),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Anomaly score in (0, 1); higher is more isolated.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(CoreError::DimMismatch(format!(
                "forest expects {} features, got {}",
                self.feature_dim,
                x.len()
            )));
        }
        let mean_path: f64 =
            self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        Ok(2.0_f64.powf(-mean_path / self.normalization))
    }
}

fn build_tree<R: Rng>(
    sample: &[&Vec<f64>],
    depth: usize,
    max_depth: usize,
    feature_dim: usize,
    rng: &mut R,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    if sample.len() <= 1 || depth >= max_depth {
        nodes.push(TreeNode::Leaf { size: sample.len() });
        return id;
    }
    // Candidate features must have spread; otherwise the node is pure.
    let spread: Vec<usize> = (0..feature_dim)
        .filter(|&f| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for r in sample {
                lo = lo.min(r[f]);
                hi = hi.max(r[f]);
            }
            hi > lo
        })
        .collect();
    if spread.is_empty() {
        nodes.push(TreeNode::Leaf { size: sample.len() });
        return id;
    }
    let feature = spread[rng.random_range(0..spread.len())];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in sample {
        lo = lo.min(r[feature]);
        hi = hi.max(r[feature]);
    }
    let threshold = rng.random_range(lo..hi);
    let (left_rows, right_rows): (Vec<&Vec<f64>>, Vec<&Vec<f64>>) =
        sample.iter().partition(|r| r[feature] < threshold);

    nodes.push(TreeNode::Leaf { size: 0 }); // placeholder, patched below
    let left = build_tree(&left_rows, depth + 1, max_depth, feature_dim, rng, nodes);
    let right = build_tree(&right_rows, depth + 1, max_depth, feature_dim, rng, nodes);
    nodes[id] = TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster_data(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                vec![
                    1.0 + 0.1 * (rng.random::<f64>() - 0.5),
                    -2.0 + 0.1 * (rng.random::<f64>() - 0.5),
                ]
            })
            .collect()
    }

    #[test]
    fn outlier_scores_higher_than_inlier() {
        let data = cluster_data(16, 3);
        let forest = IsolationForest::fit(&data, &ForestConfig::default(), 7).unwrap();
        let inlier = forest.score(&[1.0, -2.0]).unwrap();
        let outlier = forest.score(&[11.0, -2.0]).unwrap();
        assert!(
            outlier > inlier,
            "outlier {outlier} should exceed inlier {inlier}"
        );
    }

    #[test]
    fn deterministic_given_seed() {
        let data = cluster_data(64, 5);
        let f1 = IsolationForest::fit(&data, &ForestConfig::default(), 11).unwrap();
        let f2 = IsolationForest::fit(&data, &ForestConfig::default(), 11).unwrap();
        for probe in cluster_data(10, 99) {
            assert_eq!(f1.score(&probe).unwrap(), f2.score(&probe).unwrap());
        }
    }

    #[test]
    fn empty_data_rejected() {
        assert!(IsolationForest::fit(&[], &ForestConfig::default(), 1).is_err());
    }

    #[test]
    fn brute_force_single_tree_path_sanity() {
        // On a tiny dataset, a dense-cluster point needs more splits to
        // isolate than a far outlier, so its path is longer.
        let mut data = cluster_data(15, 21);
        data.push(vec![50.0, 50.0]);
        let cfg = ForestConfig {
            n_trees: 200,
            subsample: 16,
        };
        let forest = IsolationForest::fit(&data, &cfg, 13).unwrap();
        let dense = forest.score(&[1.0, -2.0]).unwrap();
        let far = forest.score(&[50.0, 50.0]).unwrap();
        assert!(far > dense);
        assert!(far > 0.5, "clear outlier should score above 0.5, got {far}");
    }
}

//! CART decision tree with Gini impurity.
//!
//! Thresholds are midpoints between sorted distinct values; among splits of
//! equal gain the lower feature index wins, then the lower threshold. Sample
//! weights are supported so the tree can serve as a boosting base learner.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How many features to consider at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSubset {
    All,
    Sqrt,
    Log2,
}

impl FeatureSubset {
    fn count(self, total: usize) -> usize {
        let m = match self {
            FeatureSubset::All => total,
            FeatureSubset::Sqrt => (total as f64).sqrt().floor() as usize,
            FeatureSubset::Log2 => (total as f64).log2().floor() as usize,
        };
        m.clamp(1, total)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub feature_subset: FeatureSubset,
}

impl Default for TreeConfig {
    fn default() -> TreeConfig {
        TreeConfig {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            feature_subset: FeatureSubset::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        /// Weighted class distribution at the leaf.
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    pub class_count: usize,
    pub feature_count: usize,
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    weights: &'a [f64],
    class_count: usize,
    config: TreeConfig,
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Fit a tree. `weights` default to 1 per sample when absent.
    pub fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        class_count: usize,
        config: TreeConfig,
        weights: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<DecisionTree> {
        let rows = x.nrows();
        if rows == 0 {
            return Err(Error::EmptyMatrix);
        }
        if rows != y.len() {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: y.len(),
            });
        }
        let default_w;
        let weights = match weights {
            Some(w) => {
                if w.len() != rows {
                    return Err(Error::DimensionMismatch {
                        expected: rows,
                        got: w.len(),
                    });
                }
                w
            }
            None => {
                default_w = vec![1.0; rows];
                &default_w
            }
        };
        let mut builder = Builder {
            x,
            y,
            weights,
            class_count,
            config,
            nodes: Vec::new(),
        };
        let mut indices: Vec<usize> = (0..rows).collect();
        builder.grow(&mut indices, 0, rng);
        Ok(DecisionTree {
            nodes: builder.nodes,
            class_count,
            feature_count: x.ncols(),
        })
    }

    /// Class distribution at the leaf this row lands in.
    pub fn predict_dist(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Majority class at the leaf, ties toward the lowest index.
    pub fn predict_label(&self, row: &[f64]) -> usize {
        let dist = self.predict_dist(row);
        let mut best = 0;
        for (i, &v) in dist.iter().enumerate().skip(1) {
            if v > dist[best] {
                best = i;
            }
        }
        best
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn class_weights(&self, indices: &[usize]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.class_count];
        let mut total = 0.0;
        for &i in indices {
            counts[self.y[i]] += self.weights[i];
            total += self.weights[i];
        }
        (counts, total)
    }

    /// Returns the index of the created node.
    fn grow(&mut self, indices: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (counts, total) = self.class_weights(indices);
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        let depth_stop = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_stop || indices.len() < self.config.min_samples_split {
            return self.leaf(counts, total);
        }
        match self.best_split(indices, rng) {
            None => self.leaf(counts, total),
            Some(split) => {
                // Partition in place: rows with value <= threshold first.
                let mut lo = 0;
                let mut hi = indices.len();
                while lo < hi {
                    if self.x[(indices[lo], split.feature)] <= split.threshold {
                        lo += 1;
                    } else {
                        indices.swap(lo, hi - 1);
                        hi -= 1;
                    }
                }
                // Keep child row order deterministic regardless of the swaps.
                indices[..lo].sort_unstable();
                indices[lo..].sort_unstable();

                let node = self.nodes.len();
                self.nodes.push(Node::Leaf { dist: Vec::new() }); // placeholder
                let (left_idx, right_idx) = indices.split_at_mut(lo);
                let left = self.grow(left_idx, depth + 1, rng);
                let right = self.grow(right_idx, depth + 1, rng);
                self.nodes[node] = Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                node
            }
        }
    }

    fn leaf(&mut self, counts: Vec<f64>, total: f64) -> usize {
        let dist = if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / self.class_count as f64; self.class_count]
        };
        self.nodes.push(Node::Leaf { dist });
        self.nodes.len() - 1
    }

    fn best_split(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let total_features = self.x.ncols();
        let m = self.config.feature_subset.count(total_features);
        let mut candidates: Vec<usize> = (0..total_features).collect();
        if m < total_features {
            candidates.shuffle(rng);
            candidates.truncate(m);
            candidates.sort_unstable(); // deterministic tie-breaking order
        }

        let (parent_counts, parent_total) = self.class_weights(indices);
        let parent_gini = gini(&parent_counts, parent_total);
        let min_leaf = self.config.min_samples_leaf;

        let mut best: Option<BestSplit> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
        for &feature in &candidates {
            column.clear();
            column.extend(indices.iter().map(|&i| (self.x[(i, feature)], i)));
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));

            let mut left_counts = vec![0.0; self.class_count];
            let mut left_total = 0.0;
            for pos in 0..column.len() - 1 {
                let (value, i) = column[pos];
                left_counts[self.y[i]] += self.weights[i];
                left_total += self.weights[i];
                let next = column[pos + 1].0;
                if next == value {
                    continue; // can only cut between distinct values
                }
                let left_n = pos + 1;
                let right_n = column.len() - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let right_counts: Vec<f64> = parent_counts
                    .iter()
                    .zip(&left_counts)
                    .map(|(p, l)| p - l)
                    .collect();
                let right_total = parent_total - left_total;
                let weighted = (left_total * gini(&left_counts, left_total)
                    + right_total * gini(&right_counts, right_total))
                    / parent_total;
                // Zero-gain cuts stay legal so interaction-only structure
                // (e.g. XOR) remains reachable at depth 2; impure nodes keep
                // splitting until a stopping rule fires.
                let gain = (parent_gini - weighted).max(0.0);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature,
                        threshold: value + (next - value) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|c| {
            let p = c / total;
            p * p
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::array;

    fn xor_data() -> (ndarray::Array2<f64>, Vec<usize>) {
        (
            array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            vec![0, 1, 1, 0],
        )
    }

    fn training_accuracy(tree: &DecisionTree, x: &ndarray::Array2<f64>, y: &[usize]) -> f64 {
        let correct = x
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(row, &label)| tree.predict_label(row.as_slice().unwrap()) == label)
            .count();
        correct as f64 / y.len() as f64
    }

    #[test]
    fn depth1_cannot_solve_xor_depth2_can() {
        let (x, y) = xor_data();
        // Exhaustive check: any single axis-aligned cut leaves XOR at 50%.
        let mut rng = substream(0, "tree-test", 0);
        let cfg1 = TreeConfig {
            max_depth: Some(1),
            ..TreeConfig::default()
        };
        let stump = DecisionTree::fit(x.view(), &y, 2, cfg1, None, &mut rng).unwrap();
        assert!(training_accuracy(&stump, &x, &y) <= 0.5);

        let cfg2 = TreeConfig {
            max_depth: Some(2),
            ..TreeConfig::default()
        };
        let tree = DecisionTree::fit(x.view(), &y, 2, cfg2, None, &mut rng).unwrap();
        assert_eq!(training_accuracy(&tree, &x, &y), 1.0);
    }

    #[test]
    fn pure_node_stops_growth() {
        let x = array![[1.0], [2.0], [3.0]];
        let y = vec![1, 1, 1];
        let mut rng = substream(0, "tree-test", 1);
        let tree =
            DecisionTree::fit(x.view(), &y, 2, TreeConfig::default(), None, &mut rng).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.predict_dist(&[2.0]), &[0.0, 1.0]);
    }

    #[test]
    fn threshold_is_midpoint() {
        let x = array![[1.0], [3.0]];
        let y = vec![0, 1];
        let mut rng = substream(0, "tree-test", 2);
        let tree =
            DecisionTree::fit(x.view(), &y, 2, TreeConfig::default(), None, &mut rng).unwrap();
        // cut at (1+3)/2 = 2: both sides classified exactly
        assert_eq!(tree.predict_label(&[1.9]), 0);
        assert_eq!(tree.predict_label(&[2.1]), 1);
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = vec![0, 0, 0, 1];
        let cfg = TreeConfig {
            min_samples_leaf: 2,
            ..TreeConfig::default()
        };
        let mut rng = substream(0, "tree-test", 3);
        let tree = DecisionTree::fit(x.view(), &y, 2, cfg, None, &mut rng).unwrap();
        // The only legal cut is 2|2; the 3|1 cut that isolates the positive
        // is forbidden.
        assert!(tree.leaf_count() <= 2);
    }

    #[test]
    fn weights_steer_the_split() {
        // Unweighted, class 1 at x=2 is noise; with a large weight the tree
        // must carve it out.
        let x = array![[1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = vec![0, 1, 0, 0, 0];
        let w = vec![1.0, 10.0, 1.0, 1.0, 1.0];
        let mut rng = substream(0, "tree-test", 4);
        let tree = DecisionTree::fit(
            x.view(),
            &y,
            2,
            TreeConfig::default(),
            Some(&w),
            &mut rng,
        )
        .unwrap();
        assert_eq!(tree.predict_label(&[2.0]), 1);
        assert_eq!(tree.predict_label(&[5.0]), 0);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = array![
            [0.5, 1.0],
            [1.5, 0.2],
            [0.7, 0.9],
            [2.5, 0.1],
            [0.1, 1.4],
            [1.9, 0.3]
        ];
        let y = vec![0, 1, 0, 1, 0, 1];
        let cfg = TreeConfig {
            feature_subset: FeatureSubset::Sqrt,
            ..TreeConfig::default()
        };
        let a = DecisionTree::fit(x.view(), &y, 2, cfg, None, &mut substream(9, "t", 0)).unwrap();
        let b = DecisionTree::fit(x.view(), &y, 2, cfg, None, &mut substream(9, "t", 0)).unwrap();
        assert_eq!(a, b);
    }
}

//! Gradient-boosted trees with a multiclass softmax objective, one tree per
//! class per round, Newton leaf values, shrinkage, and seeded row/column
//! subsampling.
//!
//! Two growth policies share the machinery: best-leaf-first growth capped by
//! `num_leaves` (with minimum child count and hessian constraints), and
//! depth-wise growth capped by `max_depth` with `gamma` as minimum split
//! gain. Leaf values are L1-soft-thresholded and L2-shrunk.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierFamily, ClassifierSpec, Probabilities};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GrowthPolicy {
    /// Best-first growth up to `num_leaves` leaves.
    Leafwise {
        num_leaves: usize,
        min_child_samples: usize,
        min_child_weight: f64,
    },
    /// Level-order growth to `max_depth`; splits must gain more than `gamma`.
    Depthwise { max_depth: usize, gamma: f64 },
}

#[derive(Debug, Clone)]
pub(super) struct GbParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub policy: GrowthPolicy,
}

impl GbParams {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<GbParams> {
        let rounds = spec.int_in("n_estimators", 100, 1, i64::MAX)? as usize;
        let learning_rate = spec.float_in("learning_rate", 0.1, f64::MIN_POSITIVE, 10.0)?;
        let subsample = spec.float_in("subsample", 1.0, f64::MIN_POSITIVE, 1.0)?;
        let colsample = spec.float_in("colsample_bytree", 1.0, f64::MIN_POSITIVE, 1.0)?;
        match spec.family {
            ClassifierFamily::GbLeafwise => Ok(GbParams {
                rounds,
                learning_rate,
                subsample,
                colsample,
                reg_alpha: spec.float_in("reg_alpha", 0.0, 0.0, f64::MAX)?,
                reg_lambda: spec.float_in("reg_lambda", 0.0, 0.0, f64::MAX)?,
                policy: GrowthPolicy::Leafwise {
                    num_leaves: spec.int_in("num_leaves", 31, 2, i64::MAX)? as usize,
                    min_child_samples: spec.int_in("min_child_samples", 20, 1, i64::MAX)? as usize,
                    min_child_weight: spec.float_in("min_child_weight", 1e-3, 0.0, f64::MAX)?,
                },
            }),
            ClassifierFamily::GbRegularized => Ok(GbParams {
                rounds,
                learning_rate,
                subsample,
                colsample,
                // fixed at the usual depth-wise defaults; not searched
                reg_alpha: 0.0,
                reg_lambda: 1.0,
                policy: GrowthPolicy::Depthwise {
                    max_depth: spec.int_in("max_depth", 6, 1, i64::MAX)? as usize,
                    gamma: spec.float_in("gamma", 0.0, 0.0, f64::MAX)?,
                },
            }),
            other => Err(Error::InvalidHyperparameter {
                family: other.name().to_string(),
                key: "family".into(),
                reason: "not a gradient-boosting family".into(),
            }),
        }
    }
}

/// A regression tree over (gradient, hessian) statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradTree {
    nodes: Vec<GradNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum GradNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

impl GradTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                GradNode::Leaf { value } => return *value,
                GradNode::Split {
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
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbModel {
    /// `trees[round][class]`.
    pub trees: Vec<Vec<GradTree>>,
    pub class_count: usize,
    pub learning_rate: f64,
    /// Mean training log-loss after each round.
    pub train_loss: Vec<f64>,
}

/// One prospective leaf during growth.
struct LeafCandidate {
    node: usize,
    indices: Vec<usize>,
    best: Option<SplitChoice>,
}

#[derive(Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_count: usize,
}

struct TreeGrower<'a> {
    x: ArrayView2<'a, f64>,
    grad: &'a [f64],
    hess: &'a [f64],
    columns: &'a [usize],
    reg_alpha: f64,
    reg_lambda: f64,
    min_child_samples: usize,
    min_child_weight: f64,
}

impl TreeGrower<'_> {
    fn sums(&self, indices: &[usize]) -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        for &i in indices {
            g += self.grad[i];
            h += self.hess[i];
        }
        (g, h)
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        let shrunk = if g > self.reg_alpha {
            g - self.reg_alpha
        } else if g < -self.reg_alpha {
            g + self.reg_alpha
        } else {
            0.0
        };
        -shrunk / (h + self.reg_lambda + 1e-16)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let shrunk = (g.abs() - self.reg_alpha).max(0.0);
        shrunk * shrunk / (h + self.reg_lambda + 1e-16)
    }

    /// Best split of the node, or None when every cut violates constraints
    /// or gains nothing.
    fn best_split(&self, indices: &[usize]) -> Option<SplitChoice> {
        let (g_total, h_total) = self.sums(indices);
        let parent_score = self.score(g_total, h_total);
        let mut best: Option<SplitChoice> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
        for &feature in self.columns {
            column.clear();
            column.extend(indices.iter().map(|&i| (self.x[(i, feature)], i)));
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            for pos in 0..column.len() - 1 {
                let (value, i) = column[pos];
                g_left += self.grad[i];
                h_left += self.hess[i];
                let next = column[pos + 1].0;
                if next == value {
                    continue;
                }
                let left_count = pos + 1;
                let right_count = column.len() - left_count;
                if left_count < self.min_child_samples || right_count < self.min_child_samples {
                    continue;
                }
                let h_right = h_total - h_left;
                if h_left < self.min_child_weight || h_right < self.min_child_weight {
                    continue;
                }
                let g_right = g_total - g_left;
                let gain = 0.5
                    * (self.score(g_left, h_left) + self.score(g_right, h_right) - parent_score);
                if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature,
                        threshold: value + (next - value) / 2.0,
                        gain,
                        left_count,
                    });
                }
            }
        }
        best
    }

    fn split_indices(&self, indices: &[usize], choice: &SplitChoice) -> (Vec<usize>, Vec<usize>) {
        let mut left = Vec::with_capacity(choice.left_count);
        let mut right = Vec::with_capacity(indices.len() - choice.left_count);
        for &i in indices {
            if self.x[(i, choice.feature)] <= choice.threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        (left, right)
    }

    fn grow(&self, indices: Vec<usize>, policy: GrowthPolicy) -> GradTree {
        match policy {
            GrowthPolicy::Leafwise { num_leaves, .. } => self.grow_leafwise(indices, num_leaves),
            GrowthPolicy::Depthwise { max_depth, gamma } => {
                let mut nodes = Vec::new();
                self.grow_depthwise(indices, 0, max_depth, gamma, &mut nodes);
                GradTree { nodes }
            }
        }
    }

    fn grow_depthwise(
        &self,
        indices: Vec<usize>,
        depth: usize,
        max_depth: usize,
        gamma: f64,
        nodes: &mut Vec<GradNode>,
    ) -> usize {
        let (g, h) = self.sums(&indices);
        let choice = if depth < max_depth {
            self.best_split(&indices).filter(|c| c.gain > gamma)
        } else {
            None
        };
        match choice {
            None => {
                nodes.push(GradNode::Leaf {
                    value: self.leaf_value(g, h),
                });
                nodes.len() - 1
            }
            Some(choice) => {
                let (left_idx, right_idx) = self.split_indices(&indices, &choice);
                let node = nodes.len();
                nodes.push(GradNode::Leaf { value: 0.0 }); // placeholder
                let left = self.grow_depthwise(left_idx, depth + 1, max_depth, gamma, nodes);
                let right = self.grow_depthwise(right_idx, depth + 1, max_depth, gamma, nodes);
                nodes[node] = GradNode::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left,
                    right,
                };
                node
            }
        }
    }

    fn grow_leafwise(&self, indices: Vec<usize>, num_leaves: usize) -> GradTree {
        let mut nodes = vec![GradNode::Leaf { value: 0.0 }];
        let root_best = self.best_split(&indices);
        let mut frontier = vec![LeafCandidate {
            node: 0,
            indices,
            best: root_best,
        }];
        let mut leaves = 1;

        while leaves < num_leaves {
            // Pick the splittable frontier leaf with the largest gain;
            // insertion order breaks exact ties.
            let Some(pick) = frontier
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.best.map(|b| (i, b.gain)))
                .max_by(|a, b| {
                    a.1.partial_cmp(&b.1)
                        .expect("finite gains")
                        .then(b.0.cmp(&a.0))
                })
                .map(|(i, _)| i)
            else {
                break;
            };
            let candidate = frontier.swap_remove(pick);
            let choice = candidate.best.expect("picked splittable leaf");
            let (left_idx, right_idx) = self.split_indices(&candidate.indices, &choice);

            let left_node = nodes.len();
            nodes.push(GradNode::Leaf { value: 0.0 });
            let right_node = nodes.len();
            nodes.push(GradNode::Leaf { value: 0.0 });
            nodes[candidate.node] = GradNode::Split {
                feature: choice.feature,
                threshold: choice.threshold,
                left: left_node,
                right: right_node,
            };
            leaves += 1;

            let left_best = self.best_split(&left_idx);
            let right_best = self.best_split(&right_idx);
            frontier.push(LeafCandidate {
                node: left_node,
                indices: left_idx,
                best: left_best,
            });
            frontier.push(LeafCandidate {
                node: right_node,
                indices: right_idx,
                best: right_best,
            });
        }

        for leaf in frontier {
            let (g, h) = self.sums(&leaf.indices);
            nodes[leaf.node] = GradNode::Leaf {
                value: self.leaf_value(g, h),
            };
        }
        GradTree { nodes }
    }
}

fn softmax_rows(scores: &[Vec<f64>]) -> Vec<Vec<f64>> {
    scores
        .iter()
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

fn mean_log_loss(probs: &[Vec<f64>], y: &[usize]) -> f64 {
    let eps = 1e-15;
    probs
        .iter()
        .zip(y)
        .map(|(p, &t)| -(p[t].max(eps).ln()))
        .sum::<f64>()
        / y.len() as f64
}

fn sample_without_replacement(n: usize, take: usize, stream: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(stream);
    idx.truncate(take);
    idx.sort_unstable();
    idx
}

pub(super) fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<GbModel> {
    let params = GbParams::from_spec(spec)?;
    let n = x.nrows();
    let d = x.ncols();
    let row_take = ((params.subsample * n as f64).floor() as usize).clamp(1, n);
    let col_take = ((params.colsample * d as f64).floor() as usize).clamp(1, d);

    let mut scores = vec![vec![0.0; class_count]; n];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut train_loss = Vec::with_capacity(params.rounds);
    let mut row_buf = vec![0.0; d];

    for round in 0..params.rounds {
        let probs = softmax_rows(&scores);
        let rows = if row_take < n {
            sample_without_replacement(n, row_take, &mut rng::substream(seed, "gb-rows", round as u64))
        } else {
            (0..n).collect()
        };
        let cols = if col_take < d {
            sample_without_replacement(d, col_take, &mut rng::substream(seed, "gb-cols", round as u64))
        } else {
            (0..d).collect()
        };

        let mut round_trees = Vec::with_capacity(class_count);
        for class in 0..class_count {
            let mut grad = vec![0.0; n];
            let mut hess = vec![0.0; n];
            for i in 0..n {
                let p = probs[i][class];
                grad[i] = p - f64::from(y[i] == class);
                hess[i] = (p * (1.0 - p)).max(1e-16);
            }
            let grower = TreeGrower {
                x,
                grad: &grad,
                hess: &hess,
                columns: &cols,
                reg_alpha: params.reg_alpha,
                reg_lambda: params.reg_lambda,
                min_child_samples: match params.policy {
                    GrowthPolicy::Leafwise {
                        min_child_samples, ..
                    } => min_child_samples,
                    GrowthPolicy::Depthwise { .. } => 1,
                },
                min_child_weight: match params.policy {
                    GrowthPolicy::Leafwise {
                        min_child_weight, ..
                    } => min_child_weight,
                    GrowthPolicy::Depthwise { .. } => 1.0,
                },
            };
            let tree = grower.grow(rows.clone(), params.policy);
            for i in 0..n {
                for (j, v) in x.row(i).iter().enumerate() {
                    row_buf[j] = *v;
                }
                scores[i][class] += params.learning_rate * tree.predict(&row_buf);
            }
            round_trees.push(tree);
        }
        trees.push(round_trees);
        train_loss.push(mean_log_loss(&softmax_rows(&scores), y));
    }

    Ok(GbModel {
        trees,
        class_count,
        learning_rate: params.learning_rate,
        train_loss,
    })
}

impl GbModel {
    pub fn predict_proba(&self, row: &[f64]) -> Result<Probabilities> {
        let mut scores = vec![0.0; self.class_count];
        for round in &self.trees {
            for (class, tree) in round.iter().enumerate() {
                scores[class] += self.learning_rate * tree.predict(row);
            }
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
        Probabilities::from_raw(exps)
    }
}

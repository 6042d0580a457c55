//! Random forest: bagged CART trees voting over classes.
//!
//! `max_features` follows the usual classifier convention where `auto` means
//! `sqrt`; `all` disables feature subsampling. Probabilities are hard-vote
//! fractions across trees.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, FeatureSubset, TreeConfig};
use super::{ClassifierSpec, Probabilities};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone)]
pub(super) struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub feature_subset: FeatureSubset,
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<ForestParams> {
        let subset = match spec
            .text_in("max_features", "sqrt", &["auto", "sqrt", "log2", "all"])?
            .as_str()
        {
            "log2" => FeatureSubset::Log2,
            "all" => FeatureSubset::All,
            _ => FeatureSubset::Sqrt, // auto is the classifier alias for sqrt
        };
        Ok(ForestParams {
            n_estimators: spec.int_in("n_estimators", 100, 1, i64::MAX)? as usize,
            max_depth: spec.optional_int("max_depth", 1)?.map(|d| d as usize),
            min_samples_split: spec.int_in("min_samples_split", 2, 2, i64::MAX)? as usize,
            min_samples_leaf: spec.int_in("min_samples_leaf", 1, 1, i64::MAX)? as usize,
            feature_subset: subset,
            bootstrap: spec.bool_or("bootstrap", true)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
}

pub(super) fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<ForestModel> {
    let params = ForestParams::from_spec(spec)?;
    let config = TreeConfig {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        min_samples_leaf: params.min_samples_leaf,
        feature_subset: params.feature_subset,
    };
    let n = x.nrows();
    let trees: Vec<DecisionTree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut stream = rng::substream(seed, "forest-tree", t as u64);
            if params.bootstrap {
                let idx: Vec<usize> = (0..n).map(|_| stream.random_range(0..n)).collect();
                let mut bx = Array2::zeros((n, x.ncols()));
                let mut by = Vec::with_capacity(n);
                for (pos, &i) in idx.iter().enumerate() {
                    bx.row_mut(pos).assign(&x.row(i));
                    by.push(y[i]);
                }
                DecisionTree::fit(bx.view(), &by, class_count, config, None, &mut stream)
            } else {
                DecisionTree::fit(x, y, class_count, config, None, &mut stream)
            }
        })
        .collect::<Result<_>>()?;
    Ok(ForestModel { trees })
}

impl ForestModel {
    pub fn predict_proba(&self, row: &[f64]) -> Result<Probabilities> {
        let classes = self.trees[0].class_count;
        let mut votes = vec![0.0; classes];
        for tree in &self.trees {
            votes[tree.predict_label(row)] += 1.0;
        }
        Probabilities::from_raw(votes)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fit_classifier, ClassifierFamily, ClassifierSpec, ModelState};
    use ndarray::Array2;

    fn blob_data() -> (Array2<f64>, Vec<usize>) {
        // Four well-separated clusters, 10 points each.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)];
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..10 {
                let jitter = i as f64 * 0.05;
                rows.push([cx + jitter, cy - jitter]);
                labels.push(c);
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        (Array2::from_shape_vec((40, 2), flat).unwrap(), labels)
    }

    #[test]
    fn unanimous_trees_give_one_hot_probability() {
        let (x, y) = blob_data();
        let spec = ClassifierSpec::new(ClassifierFamily::RandomForest)
            .with_int("n_estimators", 7)
            .with_text("max_features", "all");
        let model = fit_classifier(&spec, x.view(), &y, 4, 3).unwrap();
        // Deep in cluster 2 every tree votes class 2.
        let p = model.predict_proba(&[0.0, 10.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_tree_full_sampling_equals_plain_tree() {
        use super::super::tree::{DecisionTree, TreeConfig};
        let (x, y) = blob_data();
        let spec = ClassifierSpec::new(ClassifierFamily::RandomForest)
            .with_int("n_estimators", 1)
            .with_text("max_features", "all")
            .with("bootstrap", super::super::HyperValue::Bool(false));
        let model = fit_classifier(&spec, x.view(), &y, 4, 42).unwrap();
        let ModelState::Forest(forest) = &model.state else {
            panic!("expected forest state");
        };
        let mut stream = crate::rng::substream(42, "forest-tree", 0);
        let plain =
            DecisionTree::fit(x.view(), &y, 4, TreeConfig::default(), None, &mut stream).unwrap();
        assert_eq!(forest.trees[0], plain);
    }

    #[test]
    fn forest_fit_is_deterministic() {
        let (x, y) = blob_data();
        let spec = ClassifierSpec::new(ClassifierFamily::RandomForest).with_int("n_estimators", 5);
        let a = fit_classifier(&spec, x.view(), &y, 4, 7).unwrap();
        let b = fit_classifier(&spec, x.view(), &y, 4, 7).unwrap();
        assert_eq!(a, b);
    }
}

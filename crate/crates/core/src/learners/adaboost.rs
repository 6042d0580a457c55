//! Multiclass AdaBoost (SAMME) over depth-limited CART trees.
//!
//! A round is accepted only while its weighted error stays below
//! (K-1)/K, which keeps every stage weight ln((1-e)/e) + ln(K-1) positive.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, FeatureSubset, TreeConfig};
use super::{ClassifierSpec, Probabilities};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub(super) struct AdaParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub base_max_depth: usize,
}

impl AdaParams {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<AdaParams> {
        Ok(AdaParams {
            n_estimators: spec.int_in("n_estimators", 50, 1, i64::MAX)? as usize,
            learning_rate: spec.float_in("learning_rate", 1.0, f64::MIN_POSITIVE, 10.0)?,
            base_max_depth: spec.int_in("base_estimator_max_depth", 1, 1, i64::MAX)? as usize,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub tree: DecisionTree,
    /// Stage weight, learning-rate scaled.
    pub alpha: f64,
    /// Weighted training error of the round, kept for diagnostics.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaModel {
    pub rounds: Vec<Round>,
    pub class_count: usize,
}

pub(super) fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<AdaModel> {
    let params = AdaParams::from_spec(spec)?;
    let n = x.nrows();
    let config = TreeConfig {
        max_depth: Some(params.base_max_depth),
        feature_subset: FeatureSubset::All,
        ..TreeConfig::default()
    };
    let chance = (class_count as f64 - 1.0) / class_count as f64;

    let mut weights = vec![1.0 / n as f64; n];
    let mut rounds = Vec::new();
    for m in 0..params.n_estimators {
        let mut stream = rng::substream(seed, "ada-round", m as u64);
        let tree = DecisionTree::fit(x, y, class_count, config, Some(&weights), &mut stream)?;
        let predictions: Vec<usize> = x
            .rows()
            .into_iter()
            .map(|row| tree.predict_label(row.as_slice().expect("contiguous rows")))
            .collect();
        let error: f64 = weights
            .iter()
            .zip(predictions.iter().zip(y))
            .filter(|(_, (p, t))| p != t)
            .map(|(w, _)| w)
            .sum();

        if error >= chance {
            if rounds.is_empty() {
                return Err(Error::DegenerateInput(
                    "base learner no better than chance".into(),
                ));
            }
            break; // discard this round and stop
        }
        let floored = error.max(1e-10);
        let alpha =
            params.learning_rate * ((1.0 - floored).ln() - floored.ln() + (class_count as f64 - 1.0).ln());
        rounds.push(Round {
            tree,
            alpha,
            error,
        });
        if error <= 0.0 {
            break; // perfect stage dominates; further rounds cannot reweight
        }
        for (w, (p, t)) in weights.iter_mut().zip(predictions.iter().zip(y)) {
            if p != t {
                *w *= alpha.exp();
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }
    Ok(AdaModel {
        rounds,
        class_count,
    })
}

impl AdaModel {
    pub fn predict_proba(&self, row: &[f64]) -> Result<Probabilities> {
        let mut votes = vec![0.0; self.class_count];
        for round in &self.rounds {
            votes[round.tree.predict_label(row)] += round.alpha;
        }
        Probabilities::from_raw(votes)
    }
}

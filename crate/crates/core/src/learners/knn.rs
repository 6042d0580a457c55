//! k-nearest-neighbor classifier with Euclidean distance.
//!
//! Probabilities are neighbor vote fractions. Distance ties break toward the
//! lower training-row index so predictions are deterministic.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, Probabilities};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    x: Array2<f64>,
    y: Vec<usize>,
}

pub(super) fn fit(spec: &ClassifierSpec, x: ArrayView2<'_, f64>, y: &[usize]) -> Result<KnnModel> {
    let k = spec.int_in("k", 5, 1, i64::MAX)? as usize;
    if k > x.nrows() {
        return Err(Error::DegenerateInput(format!(
            "k={k} exceeds {} training rows",
            x.nrows()
        )));
    }
    Ok(KnnModel {
        k,
        x: x.to_owned(),
        y: y.to_vec(),
    })
}

impl KnnModel {
    pub fn predict_proba(&self, row: &[f64], class_count: usize) -> Result<Probabilities> {
        let mut dists: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let d = r
                    .iter()
                    .zip(row)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, i)
            })
            .collect();
        dists.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        });
        let mut votes = vec![0.0; class_count];
        for &(_, i) in dists.iter().take(self.k) {
            votes[self.y[i]] += 1.0;
        }
        Probabilities::from_raw(votes)
    }
}

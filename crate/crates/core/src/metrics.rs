//! Evaluation statistics: accuracy, per-class sensitivity and specificity,
//! macro F1, ROC curves, and AUC, plus the binary projection that collapses
//! grades 1-3 into a single positive class.
//!
//! All values are unit-interval fractions internally; report writers format
//! them as one-decimal percentages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::Probabilities;
use crate::schema::SteatosisGrade;

/// K x K count matrix; entry (i, j) counts true class i predicted as j.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn get(&self, true_class: usize, predicted: usize) -> usize {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, true_class: usize) -> usize {
        (0..self.classes).map(|j| self.get(true_class, j)).sum()
    }

    pub fn col_total(&self, predicted: usize) -> usize {
        (0..self.classes).map(|i| self.get(i, predicted)).sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }
}

/// Count predictions into a confusion matrix.
pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut counts = vec![0usize; classes * classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= classes || p >= classes {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for {classes} classes",
                t.max(p)
            )));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Per-class values; `None` marks a class whose statistic is undefined on
/// this sample (e.g. sensitivity of a class absent from `y_true`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

/// Aggregate summary over a confusion matrix.
///
/// Macro averages run over classes present in `y_true`; absent classes are
/// excluded rather than imputed and listed in `absent_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub macro_sensitivity: f64,
    pub macro_specificity: f64,
    pub absent_classes: Vec<usize>,
}

/// Derive the summary statistics from a confusion matrix.
pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricsSummary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let totalf = total as f64;
    let mut per_class = Vec::with_capacity(cm.classes);
    let mut absent = Vec::new();

    for c in 0..cm.classes {
        let tp = cm.get(c, c) as f64;
        let row = cm.row_total(c) as f64; // TP + FN
        let col = cm.col_total(c) as f64; // TP + FP
        let negatives = totalf - row; // TN + FP

        if row == 0.0 {
            absent.push(c);
            per_class.push(ClassMetrics {
                sensitivity: None,
                specificity: None,
                f1: None,
            });
            continue;
        }
        let sensitivity = tp / row;
        let specificity = if negatives > 0.0 {
            let fp = col - tp;
            Some((negatives - fp) / negatives)
        } else {
            None
        };
        // TP = 0 means no correct positives: F1 is 0 by convention.
        let f1 = if tp == 0.0 {
            0.0
        } else {
            let precision = tp / col;
            2.0 * precision * sensitivity / (precision + sensitivity)
        };
        per_class.push(ClassMetrics {
            sensitivity: Some(sensitivity),
            specificity,
            f1: Some(f1),
        });
    }

    let mean = |vals: Vec<f64>| -> f64 {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let macro_sensitivity = mean(per_class.iter().filter_map(|m| m.sensitivity).collect());
    let macro_specificity = mean(per_class.iter().filter_map(|m| m.specificity).collect());
    let macro_f1 = mean(per_class.iter().filter_map(|m| m.f1).collect());

    Ok(MetricsSummary {
        accuracy: cm.trace() as f64 / totalf,
        per_class,
        macro_f1,
        macro_sensitivity,
        macro_specificity,
        absent_classes: absent,
    })
}

/// Render a unit-interval fraction as a one-decimal percentage string.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// Project grades and 4-class probability vectors onto the binary task:
/// label 1 for grades 1-3, score = 1 - P(grade 0).
pub fn binary_nash(grades: &[SteatosisGrade], probs: &[Probabilities]) -> (Vec<u8>, Vec<f64>) {
    let labels = grades.iter().map(|g| u8::from(g.is_nash())).collect();
    let scores = probs.iter().map(|p| 1.0 - p.as_slice()[0]).collect();
    (labels, scores)
}

/// One operating point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// A ROC curve with its area.
///
/// Points come from sweeping thresholds over the distinct scores (ties
/// grouped); the area is the rank statistic (probability a random positive
/// outscores a random negative, ties counting one half), which equals the
/// trapezoidal area under the swept curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// CSV export: header plus one `fpr,tpr,threshold` row per point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.fpr, p.tpr, p.threshold));
        }
        out
    }
}

/// Build the ROC curve and rank-statistic AUC for binary labels and scores.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<RocCurve> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined(
            "both classes must be present".to_string(),
        ));
    }

    // Threshold sweep over distinct scores, descending; predict positive at
    // score >= threshold.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }

    // Rank-statistic AUC with half credit for ties, via tie-averaged ranks.
    let mut asc: Vec<usize> = (0..scores.len()).collect();
    asc.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank = vec![0f64; scores.len()];
    let mut i = 0;
    while i < asc.len() {
        let mut j = i;
        while j < asc.len() && scores[asc[j]] == scores[asc[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        for &idx in &asc[i..j] {
            rank[idx] = avg;
        }
        i = j;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&rank)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let posf = pos as f64;
    let auc = (rank_sum - posf * (posf + 1.0) / 2.0) / (posf * neg as f64);

    Ok(RocCurve { points, auc })
}

/// Trapezoidal area under a swept ROC curve. Kept separate from the rank
/// statistic so the two routes can check each other.
pub fn trapezoid_area(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Macro one-vs-rest AUC over the classes present in `y_true`.
pub fn macro_ovr_auc(grades: &[SteatosisGrade], probs: &[Probabilities]) -> Result<f64> {
    if grades.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: grades.len(),
            got: probs.len(),
        });
    }
    let mut present: Vec<usize> = grades.iter().map(|g| g.index()).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::AucUndefined(
            "need at least 2 classes for one-vs-rest AUC".to_string(),
        ));
    }
    let mut sum = 0.0;
    for &c in &present {
        let labels: Vec<u8> = grades.iter().map(|g| u8::from(g.index() == c)).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p.as_slice()[c]).collect();
        sum += roc_auc(&labels, &scores)?.auc;
    }
    Ok(sum / present.len() as f64)
}

/// Per-class one-vs-rest ROC curves for the classes present in `y_true`.
pub fn ovr_curves(
    grades: &[SteatosisGrade],
    probs: &[Probabilities],
) -> Result<Vec<(usize, RocCurve)>> {
    let mut present: Vec<usize> = grades.iter().map(|g| g.index()).collect();
    present.sort_unstable();
    present.dedup();
    let mut curves = Vec::new();
    for &c in &present {
        let labels: Vec<u8> = grades.iter().map(|g| u8::from(g.index() == c)).collect();
        if labels.iter().all(|&l| l == 1) {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p.as_slice()[c]).collect();
        curves.push((c, roc_auc(&labels, &scores)?));
    }
    Ok(curves)
}

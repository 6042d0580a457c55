//! The seven base-learner families behind one fit/predict contract.
//!
//! Every family consumes a complete numeric matrix and produces per-class
//! probability vectors. Fits are deterministic functions of
//! (spec, data, seed); fitted models are immutable and safe to share across
//! threads.

pub mod adaboost;
pub mod forest;
pub mod gboost;
pub mod knn;
pub mod mlp;
pub mod svm;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classifier families, declared in the canonical selection order used for
/// stable downstream feature layout.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum ClassifierFamily {
    Svm,
    RandomForest,
    GbRegularized,
    GbLeafwise,
    AdaBoost,
    Knn,
    Mlp,
}

pub const ALL_FAMILIES: [ClassifierFamily; 7] = [
    ClassifierFamily::Svm,
    ClassifierFamily::RandomForest,
    ClassifierFamily::GbRegularized,
    ClassifierFamily::GbLeafwise,
    ClassifierFamily::AdaBoost,
    ClassifierFamily::Knn,
    ClassifierFamily::Mlp,
];

impl ClassifierFamily {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierFamily::Svm => "SVM",
            ClassifierFamily::RandomForest => "RandomForest",
            ClassifierFamily::GbRegularized => "GBRegularized",
            ClassifierFamily::GbLeafwise => "GBLeafwise",
            ClassifierFamily::AdaBoost => "AdaBoost",
            ClassifierFamily::Knn => "KNN",
            ClassifierFamily::Mlp => "MLP",
        }
    }

    pub fn from_name(name: &str) -> Option<ClassifierFamily> {
        ALL_FAMILIES.iter().copied().find(|f| f.name() == name)
    }

    /// Position in the canonical selection order.
    pub fn canonical_rank(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClassifierFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl HyperValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            HyperValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            HyperValue::Float(v) => Some(*v),
            HyperValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            HyperValue::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            HyperValue::Bool(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::None => f.write_str("None"),
            HyperValue::Bool(v) => write!(f, "{v}"),
            HyperValue::Int(v) => write!(f, "{v}"),
            HyperValue::Float(v) => write!(f, "{v}"),
            HyperValue::Text(v) => write!(f, "'{v}'"),
        }
    }
}

/// A classifier family plus its hyperparameters.
///
/// Missing keys fall back to documented per-family defaults; present keys
/// are validated against the family's legal domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub family: ClassifierFamily,
    pub hyperparameters: BTreeMap<String, HyperValue>,
}

impl ClassifierSpec {
    pub fn new(family: ClassifierFamily) -> ClassifierSpec {
        ClassifierSpec {
            family,
            hyperparameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: HyperValue) -> ClassifierSpec {
        self.hyperparameters.insert(key.to_string(), value);
        self
    }

    pub fn with_int(self, key: &str, value: i64) -> ClassifierSpec {
        self.with(key, HyperValue::Int(value))
    }

    pub fn with_float(self, key: &str, value: f64) -> ClassifierSpec {
        self.with(key, HyperValue::Float(value))
    }

    pub fn with_text(self, key: &str, value: &str) -> ClassifierSpec {
        self.with(key, HyperValue::Text(value.to_string()))
    }

    fn bad(&self, key: &str, reason: &str) -> Error {
        Error::InvalidHyperparameter {
            family: self.family.name().to_string(),
            key: key.to_string(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn int_in(&self, key: &str, default: i64, lo: i64, hi: i64) -> Result<i64> {
        match self.hyperparameters.get(key) {
            None => Ok(default),
            Some(v) => {
                let v = v
                    .as_int()
                    .ok_or_else(|| self.bad(key, "expected an integer"))?;
                if v < lo || v > hi {
                    return Err(self.bad(key, &format!("must be in {lo}..={hi}")));
                }
                Ok(v)
            }
        }
    }

    pub(crate) fn float_in(&self, key: &str, default: f64, lo: f64, hi: f64) -> Result<f64> {
        match self.hyperparameters.get(key) {
            None => Ok(default),
            Some(v) => {
                let v = v
                    .as_float()
                    .ok_or_else(|| self.bad(key, "expected a number"))?;
                if !v.is_finite() || v < lo || v > hi {
                    return Err(self.bad(key, &format!("must be in [{lo}, {hi}]")));
                }
                Ok(v)
            }
        }
    }

    pub(crate) fn text_in(&self, key: &str, default: &str, allowed: &[&str]) -> Result<String> {
        match self.hyperparameters.get(key) {
            None => Ok(default.to_string()),
            Some(v) => {
                let v = v
                    .as_text()
                    .ok_or_else(|| self.bad(key, "expected a string"))?;
                if !allowed.contains(&v) {
                    return Err(self.bad(key, &format!("must be one of {allowed:?}")));
                }
                Ok(v.to_string())
            }
        }
    }

    pub(crate) fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.hyperparameters.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| self.bad(key, "expected a boolean")),
        }
    }

    /// `max_depth`-style keys where `None` means unlimited.
    pub(crate) fn optional_int(&self, key: &str, lo: i64) -> Result<Option<i64>> {
        match self.hyperparameters.get(key) {
            None | Some(HyperValue::None) => Ok(None),
            Some(v) => {
                let v = v
                    .as_int()
                    .ok_or_else(|| self.bad(key, "expected an integer or None"))?;
                if v < lo {
                    return Err(self.bad(key, &format!("must be >= {lo}")));
                }
                Ok(Some(v))
            }
        }
    }

    /// Check every key is legal for the family and every value lies in the
    /// family's declared domain.
    pub fn validate(&self) -> Result<()> {
        let legal: &[&str] = match self.family {
            ClassifierFamily::Svm => &["C", "kernel"],
            ClassifierFamily::RandomForest => &[
                "n_estimators",
                "max_depth",
                "min_samples_split",
                "min_samples_leaf",
                "max_features",
                "bootstrap",
            ],
            ClassifierFamily::GbLeafwise => &[
                "n_estimators",
                "num_leaves",
                "learning_rate",
                "min_child_samples",
                "min_child_weight",
                "subsample",
                "colsample_bytree",
                "reg_alpha",
                "reg_lambda",
            ],
            ClassifierFamily::AdaBoost => {
                &["n_estimators", "learning_rate", "base_estimator_max_depth"]
            }
            ClassifierFamily::GbRegularized => &[
                "n_estimators",
                "learning_rate",
                "max_depth",
                "subsample",
                "colsample_bytree",
                "gamma",
            ],
            ClassifierFamily::Mlp => &[
                "hidden_layer_sizes",
                "activation",
                "solver",
                "alpha",
                "learning_rate",
                "learning_rate_init",
                "batch_size",
                "momentum",
            ],
            ClassifierFamily::Knn => &["k"],
        };
        for key in self.hyperparameters.keys() {
            if !legal.contains(&key.as_str()) {
                return Err(self.bad(key, "unknown hyperparameter"));
            }
        }
        // Domain checks happen by running the same accessors fit uses.
        match self.family {
            ClassifierFamily::Svm => {
                svm::SvmParams::from_spec(self, 1)?;
            }
            ClassifierFamily::RandomForest => {
                forest::ForestParams::from_spec(self)?;
            }
            ClassifierFamily::GbLeafwise | ClassifierFamily::GbRegularized => {
                gboost::GbParams::from_spec(self)?;
            }
            ClassifierFamily::AdaBoost => {
                adaboost::AdaParams::from_spec(self)?;
            }
            ClassifierFamily::Mlp => {
                mlp::MlpParams::from_spec(self)?;
            }
            ClassifierFamily::Knn => {
                self.int_in("k", 5, 1, i64::MAX)?;
            }
        }
        Ok(())
    }

    /// Hash-friendly canonical rendering: family plus sorted key=value pairs.
    pub fn canonical_string(&self) -> String {
        let mut out = String::from(self.family.name());
        for (k, v) in &self.hyperparameters {
            out.push_str(&format!(";{k}={v}"));
        }
        out
    }
}

/// A per-class probability vector: entries in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probabilities(Vec<f64>);

impl Probabilities {
    /// Normalize non-negative finite scores into a probability vector.
    pub fn from_raw(values: Vec<f64>) -> Result<Probabilities> {
        if values.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let sum: f64 = values.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite {
                context: "probability vector".to_string(),
            });
        }
        Ok(Probabilities(values.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(classes: usize) -> Probabilities {
        Probabilities(vec![1.0 / classes as f64; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the maximal entry; ties break toward the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Family-specific fitted state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    Knn(knn::KnnModel),
    Svm(svm::SvmModel),
    Forest(forest::ForestModel),
    AdaBoost(adaboost::AdaModel),
    Gb(gboost::GbModel),
    Mlp(mlp::MlpModel),
}

/// An immutable fitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    pub class_count: usize,
    pub feature_count: usize,
    pub state: ModelState,
}

/// Fit a classifier. Deterministic given (spec, x, y, class_count, seed).
pub fn fit_classifier(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<TrainedClassifier> {
    spec.validate()?;
    let (rows, cols) = x.dim();
    if rows != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: y.len(),
        });
    }
    if class_count < 2 {
        return Err(Error::DegenerateInput("need at least 2 classes".into()));
    }
    if rows < class_count {
        return Err(Error::DegenerateInput(format!(
            "need at least {class_count} rows, got {rows}"
        )));
    }
    if let Some(&bad) = y.iter().find(|&&v| v >= class_count) {
        return Err(Error::DegenerateInput(format!(
            "label {bad} out of range for {class_count} classes"
        )));
    }
    let mut distinct: Vec<usize> = y.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateInput(
            "single class present in training labels".into(),
        ));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "training matrix".to_string(),
        });
    }

    let state = match spec.family {
        ClassifierFamily::Knn => ModelState::Knn(knn::fit(spec, x, y)?),
        ClassifierFamily::Svm => ModelState::Svm(svm::fit(spec, x, y, class_count)?),
        ClassifierFamily::RandomForest => {
            ModelState::Forest(forest::fit(spec, x, y, class_count, seed)?)
        }
        ClassifierFamily::AdaBoost => {
            ModelState::AdaBoost(adaboost::fit(spec, x, y, class_count, seed)?)
        }
        ClassifierFamily::GbLeafwise | ClassifierFamily::GbRegularized => {
            ModelState::Gb(gboost::fit(spec, x, y, class_count, seed)?)
        }
        ClassifierFamily::Mlp => ModelState::Mlp(mlp::fit(spec, x, y, class_count, seed)?),
    };

    Ok(TrainedClassifier {
        spec: spec.clone(),
        class_count,
        feature_count: cols,
        state,
    })
}

impl TrainedClassifier {
    /// Per-class probabilities for one feature vector.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Probabilities> {
        if x.len() != self.feature_count {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        match &self.state {
            ModelState::Knn(m) => m.predict_proba(x, self.class_count),
            ModelState::Svm(m) => m.predict_proba(x),
            ModelState::Forest(m) => m.predict_proba(x),
            ModelState::AdaBoost(m) => m.predict_proba(x),
            ModelState::Gb(m) => m.predict_proba(x),
            ModelState::Mlp(m) => m.predict_proba(x),
        }
    }

    /// Predicted class: argmax of the probabilities, ties toward the lowest
    /// class index.
    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(self.predict_proba(x)?.argmax())
    }

    /// Probabilities for every row of a matrix.
    pub fn predict_proba_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Probabilities>> {
        let mut buf = Vec::with_capacity(x.nrows());
        let mut row = vec![0.0; x.ncols()];
        for r in x.rows() {
            row.clear();
            row.extend(r.iter());
            buf.push(self.predict_proba(&row)?);
        }
        Ok(buf)
    }
}

/// Free-function forms of the prediction contract.
pub fn predict_proba(model: &TrainedClassifier, x: &[f64]) -> Result<Probabilities> {
    model.predict_proba(x)
}

pub fn predict_label(model: &TrainedClassifier, x: &[f64]) -> Result<usize> {
    model.predict_label(x)
}

//! Stratified k-fold cross-validation, random hyperparameter search, and the
//! accuracy screen that picks the first-layer ensemble.
//!
//! Fold plans are deterministic in (labels, k, seed). All candidates of one
//! search share one fold plan so their scores are comparable; fits inside a
//! fold draw from per-(candidate, fold) substreams so evaluation order never
//! changes results.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{fit_scaler, Scaler, TierDataset};
use crate::learners::{
    fit_classifier, ClassifierFamily, ClassifierSpec, HyperValue, Probabilities,
    TrainedClassifier,
};
use crate::metrics::{confusion, summarize, MetricsSummary};
use crate::rng;
use crate::schema::GRADE_COUNT;

/// Fold assignment for every row of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// `assignments[row]` is the fold holding that row out.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified fold assignment: fold sizes differ by at most one, and each
/// class's per-fold count stays within one of perfect proportionality.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidFolds(format!("k must be >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::InvalidFolds(format!(
            "k={k} exceeds {} samples",
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        per_class[c].push(i);
    }

    let mut assignments = vec![0usize; labels.len()];
    // Extras continue round-robin across classes so global fold sizes stay
    // within one of each other.
    let mut next_fold = 0usize;
    for (class, mut indices) in per_class.into_iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        use rand::seq::SliceRandom;
        indices.shuffle(&mut rng::substream(seed, "stratify-class", class as u64));
        let base = indices.len() / k;
        let extras = indices.len() % k;
        let mut cursor = 0;
        for fold in 0..k {
            let extra = usize::from((fold + k - next_fold) % k < extras);
            for &i in &indices[cursor..cursor + base + extra] {
                assignments[i] = fold;
            }
            cursor += base + extra;
        }
        next_fold = (next_fold + extras) % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Cross-validation outcome: per-fold summaries, their aggregates, and the
/// pooled out-of-fold predictions.
#[derive(Debug, Clone, Serialize)]
pub struct CVResult {
    pub per_fold: Vec<MetricsSummary>,
    /// Summary of all out-of-fold predictions pooled together.
    pub pooled: MetricsSummary,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    /// Out-of-fold probability vectors aligned to dataset row order.
    pub oof_probabilities: Vec<Probabilities>,
}

/// Population mean and std of a sequence.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the fold loop, collecting metrics from per-fold predictions.
///
/// `fold_eval` receives (fold, train rows, test rows) and returns the
/// probability predictions for the test rows, in order.
pub(crate) fn cv_engine<F>(
    labels: &[usize],
    class_count: usize,
    plan: &FoldPlan,
    fold_eval: F,
) -> Result<CVResult>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<Vec<Probabilities>> + Sync,
{
    let fold_outputs: Vec<(Vec<usize>, Vec<Probabilities>)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train_idx = plan.train_indices(fold);
            let test_idx = plan.test_indices(fold);
            let preds = fold_eval(fold, &train_idx, &test_idx).map_err(|e| e.in_fold(fold))?;
            debug_assert_eq!(preds.len(), test_idx.len());
            Ok((test_idx, preds))
        })
        .collect::<Result<_>>()?;

    let mut per_fold = Vec::with_capacity(plan.k);
    let mut oof: Vec<Option<Probabilities>> = vec![None; labels.len()];
    for (test_idx, preds) in &fold_outputs {
        let y_true: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        let y_pred: Vec<usize> = preds.iter().map(|p| p.argmax()).collect();
        per_fold.push(summarize(&confusion(&y_true, &y_pred, class_count)?)?);
        for (&i, p) in test_idx.iter().zip(preds) {
            oof[i] = Some(p.clone());
        }
    }
    let oof_probabilities: Vec<Probabilities> = oof
        .into_iter()
        .map(|p| p.expect("folds cover all rows"))
        .collect();
    let pooled_pred: Vec<usize> = oof_probabilities.iter().map(|p| p.argmax()).collect();
    let pooled = summarize(&confusion(labels, &pooled_pred, class_count)?)?;

    let accs: Vec<f64> = per_fold.iter().map(|s| s.accuracy).collect();
    let f1s: Vec<f64> = per_fold.iter().map(|s| s.macro_f1).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let (mean_macro_f1, std_macro_f1) = mean_std(&f1s);
    Ok(CVResult {
        per_fold,
        pooled,
        mean_accuracy,
        std_accuracy,
        mean_macro_f1,
        std_macro_f1,
        oof_probabilities,
    })
}

/// Gather rows of a dataset matrix by index.
pub(crate) fn gather_rows(dataset: &TierDataset, idx: &[usize]) -> Array2<f64> {
    let mut m = Array2::zeros((idx.len(), dataset.matrix.ncols()));
    for (pos, &i) in idx.iter().enumerate() {
        m.row_mut(pos).assign(&dataset.matrix.row(i));
    }
    m
}

/// Fit one fold of a plain tier dataset: scaler on the training rows only,
/// then the classifier on the scaled training rows.
pub(crate) fn fit_fold(
    dataset: &TierDataset,
    train_idx: &[usize],
    spec: &ClassifierSpec,
    fit_seed: u64,
) -> Result<(Scaler, TrainedClassifier)> {
    let train = gather_rows(dataset, train_idx);
    let scaler = fit_scaler(train.view())?;
    let scaled = scaler.apply(train.view())?;
    let y: Vec<usize> = train_idx.iter().map(|&i| dataset.labels[i].index()).collect();
    let model = fit_classifier(spec, scaled.view(), &y, GRADE_COUNT, fit_seed)?;
    Ok((scaler, model))
}

/// K-fold cross-validation of one spec on one tier dataset.
///
/// Every fold fits its own scaler and classifier on the k-1 training folds
/// and scores the held-out fold; nothing is ever fitted on held-out rows.
pub fn cross_validate(
    spec: &ClassifierSpec,
    dataset: &TierDataset,
    k: usize,
    seed: u64,
) -> Result<CVResult> {
    spec.validate()?;
    let labels = dataset.label_indices();
    let plan = stratified_kfold(&labels, k, rng::derive_seed(seed, "plan", 0))?;
    cv_with_plan(spec, dataset, &plan, seed)
}

pub(crate) fn cv_with_plan(
    spec: &ClassifierSpec,
    dataset: &TierDataset,
    plan: &FoldPlan,
    seed: u64,
) -> Result<CVResult> {
    let labels = dataset.label_indices();
    cv_engine(&labels, GRADE_COUNT, plan, |fold, train_idx, test_idx| {
        let (scaler, model) = fit_fold(
            dataset,
            train_idx,
            spec,
            rng::derive_seed(seed, "fold-fit", fold as u64),
        )?;
        let test = gather_rows(dataset, test_idx);
        let scaled = scaler.apply(test.view())?;
        model.predict_proba_matrix(scaled.view())
    })
}

/// One hyperparameter's sampling domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Finite list, sampled uniformly.
    Finite(Vec<HyperValue>),
    /// Integers lo..hi (upper bound exclusive).
    IntRange { lo: i64, hi: i64 },
    /// Continuous uniform on [lo, hi).
    Uniform { lo: f64, hi: f64 },
}

impl Domain {
    fn is_empty(&self) -> bool {
        match self {
            Domain::Finite(vals) => vals.is_empty(),
            Domain::IntRange { lo, hi } => lo >= hi,
            Domain::Uniform { lo, hi } => !(lo < hi),
        }
    }

    fn sample(&self, stream: &mut rand_chacha::ChaCha8Rng) -> HyperValue {
        use rand::Rng;
        match self {
            Domain::Finite(vals) => vals[stream.random_range(0..vals.len())].clone(),
            Domain::IntRange { lo, hi } => HyperValue::Int(stream.random_range(*lo..*hi)),
            Domain::Uniform { lo, hi } => HyperValue::Float(stream.random_range(*lo..*hi)),
        }
    }
}

/// A per-family hyperparameter search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: ClassifierFamily,
    pub dimensions: Vec<(String, Domain)>,
}

fn floats(vals: &[f64]) -> Domain {
    Domain::Finite(vals.iter().map(|&v| HyperValue::Float(v)).collect())
}

fn ints(vals: &[i64]) -> Domain {
    Domain::Finite(vals.iter().map(|&v| HyperValue::Int(v)).collect())
}

fn texts(vals: &[&str]) -> Domain {
    Domain::Finite(vals.iter().map(|v| HyperValue::Text(v.to_string())).collect())
}

impl SearchSpace {
    /// The standard tuning intervals for each family.
    ///
    /// KNN and the first-layer network have no published row; KNN searches
    /// k over {3,5,7,9,11} and the network reuses the meta-network space.
    pub fn standard(family: ClassifierFamily) -> SearchSpace {
        let dimensions: Vec<(String, Domain)> = match family {
            ClassifierFamily::Svm => vec![
                ("C".into(), floats(&[0.001, 0.01, 0.1, 1.0, 10.0, 100.0])),
                ("kernel".into(), texts(&["linear", "poly", "rbf", "sigmoid"])),
            ],
            ClassifierFamily::RandomForest => vec![
                ("n_estimators".into(), ints(&[100, 200, 300, 400, 500])),
                (
                    "max_depth".into(),
                    Domain::Finite(
                        std::iter::once(HyperValue::None)
                            .chain([10, 20, 30, 40, 50].map(HyperValue::Int))
                            .collect(),
                    ),
                ),
                ("min_samples_split".into(), ints(&[2, 5, 10, 15, 20])),
                ("min_samples_leaf".into(), ints(&[1, 2, 4, 6, 8])),
                ("max_features".into(), texts(&["auto", "sqrt", "log2"])),
            ],
            ClassifierFamily::GbLeafwise => vec![
                (
                    "n_estimators".into(),
                    ints(&[10, 20, 40, 50, 100, 500, 1000, 2000, 5000]),
                ),
                ("num_leaves".into(), Domain::IntRange { lo: 6, hi: 50 }),
                (
                    "learning_rate".into(),
                    floats(&[0.0001, 0.001, 0.01, 0.1, 1.0]),
                ),
                (
                    "min_child_samples".into(),
                    Domain::IntRange { lo: 100, hi: 500 },
                ),
                (
                    "min_child_weight".into(),
                    floats(&[1e-5, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4]),
                ),
                ("subsample".into(), Domain::Uniform { lo: 0.2, hi: 1.0 }),
                (
                    "colsample_bytree".into(),
                    Domain::Uniform { lo: 0.4, hi: 1.0 },
                ),
                (
                    "reg_alpha".into(),
                    floats(&[0.0, 0.1, 1.0, 2.0, 5.0, 7.0, 10.0, 50.0, 100.0]),
                ),
                (
                    "reg_lambda".into(),
                    floats(&[0.0, 0.1, 1.0, 5.0, 10.0, 20.0, 50.0, 100.0]),
                ),
            ],
            ClassifierFamily::AdaBoost => vec![
                (
                    "n_estimators".into(),
                    ints(&[10, 20, 40, 50, 100, 500, 1000, 2000, 5000]),
                ),
                ("learning_rate".into(), floats(&[0.001, 0.01, 0.1, 0.5, 1.0])),
                (
                    "base_estimator_max_depth".into(),
                    ints(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]),
                ),
            ],
            ClassifierFamily::GbRegularized => vec![
                (
                    "n_estimators".into(),
                    ints(&[10, 20, 40, 50, 100, 500, 1000, 2000, 5000]),
                ),
                (
                    "learning_rate".into(),
                    floats(&[0.001, 0.01, 0.1, 0.3, 0.5, 1.0]),
                ),
                ("max_depth".into(), ints(&[3, 4, 5, 6, 7, 8, 9, 10])),
                ("subsample".into(), floats(&[0.6, 0.7, 0.8, 0.9, 1.0])),
                ("colsample_bytree".into(), floats(&[0.6, 0.7, 0.8, 0.9, 1.0])),
                ("gamma".into(), floats(&[0.0, 0.1, 0.2, 0.3, 0.4, 0.5])),
            ],
            ClassifierFamily::Mlp => vec![
                (
                    "hidden_layer_sizes".into(),
                    texts(&[
                        "50",
                        "100",
                        "50,50",
                        "100,100",
                        "100,50",
                        "100,50,100",
                        "100,100,50",
                    ]),
                ),
                ("activation".into(), texts(&["tanh", "relu", "logistic"])),
                ("solver".into(), texts(&["sgd", "adam"])),
                ("alpha".into(), floats(&[0.0001, 0.001, 0.01, 0.1])),
                (
                    "learning_rate".into(),
                    texts(&["constant", "invscaling", "adaptive"]),
                ),
                ("learning_rate_init".into(), floats(&[0.001, 0.01, 0.1])),
                ("batch_size".into(), ints(&[32, 64, 128])),
                ("momentum".into(), floats(&[0.9, 0.95, 0.99])),
            ],
            ClassifierFamily::Knn => vec![("k".into(), ints(&[3, 5, 7, 9, 11]))],
        };
        SearchSpace { family, dimensions }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::EmptySearchSpace(format!(
                "{} space has no dimensions",
                self.family
            )));
        }
        for (key, domain) in &self.dimensions {
            if domain.is_empty() {
                return Err(Error::EmptySearchSpace(format!(
                    "{}.{key} domain is empty",
                    self.family
                )));
            }
        }
        Ok(())
    }

    /// Draw one spec, sampling each dimension independently and uniformly.
    pub fn sample(&self, stream: &mut rand_chacha::ChaCha8Rng) -> ClassifierSpec {
        let mut spec = ClassifierSpec::new(self.family);
        for (key, domain) in &self.dimensions {
            spec.hyperparameters
                .insert(key.clone(), domain.sample(stream));
        }
        spec
    }

    /// Replace one dimension's domain (run configs narrow the standard
    /// intervals this way).
    pub fn override_dimension(&mut self, key: &str, domain: Domain) {
        if let Some(dim) = self.dimensions.iter_mut().find(|(k, _)| k == key) {
            dim.1 = domain;
        } else {
            self.dimensions.push((key.to_string(), domain));
        }
    }
}

/// Everything a search evaluated, in sampling order.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub best_spec: ClassifierSpec,
    pub best_result: CVResult,
    pub evaluated: Vec<(ClassifierSpec, f64)>,
}

/// Random search driven by an arbitrary evaluation closure.
///
/// The winner is the highest mean accuracy; exact ties go to the lower
/// sampling index.
pub(crate) fn random_search_with<F>(
    space: &SearchSpace,
    n_iter: usize,
    seed: u64,
    eval: F,
) -> Result<SearchOutcome>
where
    F: Fn(usize, &ClassifierSpec) -> Result<CVResult> + Sync,
{
    space.validate()?;
    if n_iter == 0 {
        return Err(Error::InvalidConfig("n_iter must be >= 1".into()));
    }
    let specs: Vec<ClassifierSpec> = (0..n_iter)
        .map(|i| space.sample(&mut rng::substream(seed, "candidate", i as u64)))
        .collect();
    let results: Vec<CVResult> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| eval(i, spec))
        .collect::<Result<_>>()?;

    let mut best_index = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_accuracy > results[best_index].mean_accuracy {
            best_index = i;
        }
    }
    let evaluated = specs
        .iter()
        .cloned()
        .zip(results.iter().map(|r| r.mean_accuracy))
        .collect();
    Ok(SearchOutcome {
        best_index,
        best_spec: specs[best_index].clone(),
        best_result: results[best_index].clone(),
        evaluated,
    })
}

/// Random hyperparameter search over a space, scored by k-fold
/// cross-validation on a tier dataset.
pub fn random_search(
    space: &SearchSpace,
    n_iter: usize,
    dataset: &TierDataset,
    k: usize,
    seed: u64,
) -> Result<(ClassifierSpec, CVResult)> {
    let labels = dataset.label_indices();
    // One plan for every candidate keeps scores comparable.
    let plan = stratified_kfold(&labels, k, rng::derive_seed(seed, "plan", 0))?;
    let outcome = random_search_with(space, n_iter, seed, |i, spec| {
        cv_with_plan(
            spec,
            dataset,
            &plan,
            rng::derive_seed(seed, "cand-fit", i as u64),
        )
    })?;
    Ok((outcome.best_spec, outcome.best_result))
}

/// One screening-candidate outcome.
#[derive(Debug, Clone)]
pub struct CandidateEvaluation {
    pub spec: ClassifierSpec,
    pub result: CVResult,
    pub kept: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    /// Kept specs in canonical family order.
    pub selected: Vec<ClassifierSpec>,
    pub evaluations: Vec<CandidateEvaluation>,
}

/// Keep the candidates whose mean accuracy strictly exceeds the threshold,
/// reordered into the canonical family order.
pub fn screen_candidates(scored: &[(ClassifierSpec, f64)], threshold: f64) -> Vec<ClassifierSpec> {
    let mut kept: Vec<&(ClassifierSpec, f64)> =
        scored.iter().filter(|(_, acc)| *acc > threshold).collect();
    kept.sort_by_key(|(spec, _)| spec.family.canonical_rank());
    kept.into_iter().map(|(spec, _)| spec.clone()).collect()
}

/// Cross-validate every candidate on the dataset and keep those whose mean
/// accuracy strictly exceeds the threshold.
pub fn select_base_classifiers(
    candidates: &[ClassifierSpec],
    dataset: &TierDataset,
    k: usize,
    seed: u64,
    threshold: f64,
) -> Result<SelectionOutcome> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no candidate classifiers".into()));
    }
    let labels = dataset.label_indices();
    let plan = stratified_kfold(&labels, k, rng::derive_seed(seed, "plan", 0))?;
    let results: Vec<CVResult> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            cv_with_plan(
                spec,
                dataset,
                &plan,
                rng::derive_seed(seed, "screen-fit", i as u64),
            )
        })
        .collect::<Result<_>>()?;

    let scored: Vec<(ClassifierSpec, f64)> = candidates
        .iter()
        .cloned()
        .zip(results.iter().map(|r| r.mean_accuracy))
        .collect();
    let selected = screen_candidates(&scored, threshold);
    let evaluations = scored
        .into_iter()
        .zip(results)
        .map(|((spec, acc), result)| CandidateEvaluation {
            kept: acc > threshold,
            spec,
            result,
        })
        .collect();
    Ok(SelectionOutcome {
        selected,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{SteatosisGrade, Tier};
    use proptest::prelude::*;
    use rand::Rng;

    fn plan_invariants(labels: &[usize], plan: &FoldPlan) {
        // partition
        assert_eq!(plan.assignments.len(), labels.len());
        assert!(plan.assignments.iter().all(|&f| f < plan.k));
        // global balance
        let sizes = plan.fold_sizes();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1, "fold sizes {sizes:?}");
        // per-class proportionality within 1
        let classes = labels.iter().copied().max().unwrap_or(0) + 1;
        for c in 0..classes {
            let n_c = labels.iter().filter(|&&l| l == c).count();
            let ideal = n_c as f64 / plan.k as f64;
            for fold in 0..plan.k {
                let count = labels
                    .iter()
                    .zip(&plan.assignments)
                    .filter(|(&l, &f)| l == c && f == fold)
                    .count();
                assert!(
                    (count as f64 - ideal).abs() < 1.0 + 1e-9,
                    "class {c} fold {fold}: {count} vs ideal {ideal}"
                );
            }
        }
    }

    #[test]
    fn balanced_two_class_five_folds() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let plan = stratified_kfold(&labels, 5, 7).unwrap();
        plan_invariants(&labels, &plan);
        for fold in 0..5 {
            let test = plan.test_indices(fold);
            assert_eq!(test.len(), 2);
            let classes: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            assert!(classes.contains(&0) && classes.contains(&1));
        }
    }

    #[test]
    fn tier1_template_multiset_fold_sizes() {
        // 457 + 149 + 238 + 121 = 965 rows; ten folds of 96 or 97.
        let mut labels = Vec::new();
        for (class, count) in [(0usize, 457), (1, 149), (2, 238), (3, 121)] {
            labels.extend(std::iter::repeat_n(class, count));
        }
        let plan = stratified_kfold(&labels, 10, 11).unwrap();
        plan_invariants(&labels, &plan);
        for size in plan.fold_sizes() {
            assert!(size == 96 || size == 97, "fold size {size}");
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let labels: Vec<usize> = (0..57).map(|i| i % 3).collect();
        let a = stratified_kfold(&labels, 7, 99).unwrap();
        let b = stratified_kfold(&labels, 7, 99).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&labels, 7, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_fold_counts_rejected() {
        let labels = [0, 1, 0, 1];
        assert!(stratified_kfold(&labels, 1, 0).is_err());
        assert!(stratified_kfold(&labels, 5, 0).is_err());
        assert!(stratified_kfold(&labels, 4, 0).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fold_plan_invariants_hold(
            labels in proptest::collection::vec(0usize..4, 6..120),
            k in 2usize..8,
            seed in 0u64..1000,
        ) {
            prop_assume!(k <= labels.len());
            let plan = stratified_kfold(&labels, k, seed).unwrap();
            plan_invariants(&labels, &plan);
        }
    }

    pub(crate) fn toy_dataset(n_per_class: usize, separation: f64, seed: u64) -> TierDataset {
        let mut stream = rng::substream(seed, "toy-data", 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for class in 0..4usize {
            let cx = separation * (class % 2) as f64;
            let cy = separation * (class / 2) as f64;
            for i in 0..n_per_class {
                rows.push([
                    cx + stream.random::<f64>() - 0.5,
                    cy + stream.random::<f64>() - 0.5,
                ]);
                labels.push(SteatosisGrade::new(class as u8).unwrap());
                ids.push(format!("c{class}i{i}"));
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        TierDataset {
            tier: Tier::One,
            matrix: Array2::from_shape_vec((labels.len(), 2), flat).unwrap(),
            labels,
            ids,
        }
    }

    #[test]
    fn separable_data_scores_perfectly() {
        let dataset = toy_dataset(10, 50.0, 1);
        let spec = ClassifierSpec::new(ClassifierFamily::RandomForest)
            .with_int("n_estimators", 10)
            .with_text("max_features", "all");
        let result = cross_validate(&spec, &dataset, 5, 3).unwrap();
        assert_eq!(result.mean_accuracy, 1.0);
        assert_eq!(result.pooled.accuracy, 1.0);
    }

    #[test]
    fn leave_one_out_accuracy_is_binary() {
        let dataset = toy_dataset(3, 50.0, 2);
        let spec = ClassifierSpec::new(ClassifierFamily::Knn).with_int("k", 1);
        let result = cross_validate(&spec, &dataset, dataset.len(), 3).unwrap();
        assert_eq!(result.per_fold.len(), 12);
        for fold in &result.per_fold {
            assert!(fold.accuracy == 0.0 || fold.accuracy == 1.0);
        }
    }

    #[test]
    fn shuffled_labels_score_at_chance() {
        // Permutation null: with labels carrying no signal, mean CV accuracy
        // over 20 seeds must sit within 3 standard errors of 0.25.
        let mut accs = Vec::new();
        for seed in 0..20u64 {
            let mut dataset = toy_dataset(10, 0.0, seed);
            use rand::seq::SliceRandom;
            dataset
                .labels
                .shuffle(&mut rng::substream(seed, "null-shuffle", 0));
            let spec = ClassifierSpec::new(ClassifierFamily::Knn).with_int("k", 5);
            let result = cross_validate(&spec, &dataset, 5, seed).unwrap();
            accs.push(result.mean_accuracy);
        }
        let (mean, std) = mean_std(&accs);
        let stderr = std / (accs.len() as f64).sqrt();
        assert!(
            (mean - 0.25).abs() <= 3.0 * stderr.max(1e-3),
            "mean {mean}, stderr {stderr}"
        );
    }

    #[test]
    fn no_fold_fits_on_held_out_rows() {
        let dataset = toy_dataset(6, 5.0, 4);
        let labels = dataset.label_indices();
        let plan = stratified_kfold(&labels, 4, 17).unwrap();
        let log = std::sync::Mutex::new(Vec::new());
        let spec = ClassifierSpec::new(ClassifierFamily::Knn).with_int("k", 3);
        cv_engine(&labels, GRADE_COUNT, &plan, |fold, train_idx, test_idx| {
            log.lock()
                .unwrap()
                .push((fold, train_idx.to_vec(), test_idx.to_vec()));
            let (scaler, model) = fit_fold(&dataset, train_idx, &spec, 0)?;
            // The scaler must equal one fitted on exactly the training rows.
            let expect = fit_scaler(gather_rows(&dataset, train_idx).view())?;
            assert_eq!(scaler, expect);
            let test = gather_rows(&dataset, test_idx);
            model.predict_proba_matrix(scaler.apply(test.view())?.view())
        })
        .unwrap();
        let log = log.into_inner().unwrap();
        assert_eq!(log.len(), 4);
        let mut covered = vec![false; dataset.len()];
        for (_, train, test) in &log {
            for &t in test {
                assert!(!train.contains(&t), "held-out row {t} leaked into training");
                covered[t] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn single_point_space_returns_that_point() {
        let space = SearchSpace {
            family: ClassifierFamily::Knn,
            dimensions: vec![("k".into(), ints(&[3]))],
        };
        let dataset = toy_dataset(8, 50.0, 5);
        let (best, _) = random_search(&space, 1, &dataset, 4, 9).unwrap();
        assert_eq!(best.hyperparameters["k"], HyperValue::Int(3));
    }

    #[test]
    fn standard_svm_space_samples_stay_in_domain() {
        let space = SearchSpace::standard(ClassifierFamily::Svm);
        let c_list = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
        let kernels = ["linear", "poly", "rbf", "sigmoid"];
        for i in 0..200u64 {
            let spec = space.sample(&mut rng::substream(42, "svm-sample", i));
            let c = spec.hyperparameters["C"].as_float().unwrap();
            assert!(c_list.contains(&c));
            let kernel = spec.hyperparameters["kernel"].as_text().unwrap();
            assert!(kernels.contains(&kernel));
            spec.validate().unwrap();
        }
    }

    #[test]
    fn every_standard_space_samples_valid_specs() {
        for family in crate::learners::ALL_FAMILIES {
            let space = SearchSpace::standard(family);
            space.validate().unwrap();
            for i in 0..50u64 {
                let spec = space.sample(&mut rng::substream(7, "space-sample", i));
                spec.validate().unwrap_or_else(|e| panic!("{family}: {e}"));
            }
        }
    }

    #[test]
    fn search_is_deterministic_and_winner_dominates() {
        let dataset = toy_dataset(8, 3.0, 6);
        let space = SearchSpace::standard(ClassifierFamily::Knn);
        let labels = dataset.label_indices();
        let plan = stratified_kfold(&labels, 4, rng::derive_seed(33, "plan", 0)).unwrap();
        let run = || {
            random_search_with(&space, 5, 33, |i, spec| {
                cv_with_plan(
                    spec,
                    &dataset,
                    &plan,
                    rng::derive_seed(33, "cand-fit", i as u64),
                )
            })
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.best_index, b.best_index);
        assert_eq!(a.best_spec, b.best_spec);
        let sampled: Vec<f64> = a.evaluated.iter().map(|(_, acc)| *acc).collect();
        assert_eq!(
            sampled,
            b.evaluated.iter().map(|(_, acc)| *acc).collect::<Vec<_>>()
        );
        for acc in sampled {
            assert!(a.best_result.mean_accuracy >= acc);
        }
    }

    #[test]
    fn screen_is_strict_and_canonically_ordered() {
        let spec = ClassifierSpec::new;
        use ClassifierFamily::*;
        let scored = vec![(spec(Knn), 0.71), (spec(Svm), 0.69)];
        let kept = screen_candidates(&scored, 0.70);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].family, Knn);

        // exact threshold is excluded
        let scored = vec![(spec(Knn), 0.70)];
        assert!(screen_candidates(&scored, 0.70).is_empty());

        // seven screened, five kept, reordered canonically
        let scored = vec![
            (spec(Knn), 0.65),
            (spec(Mlp), 0.69),
            (spec(GbLeafwise), 0.74),
            (spec(AdaBoost), 0.74),
            (spec(Svm), 0.71),
            (spec(GbRegularized), 0.735),
            (spec(RandomForest), 0.72),
        ];
        let kept = screen_candidates(&scored, 0.70);
        let families: Vec<ClassifierFamily> = kept.iter().map(|s| s.family).collect();
        assert_eq!(
            families,
            vec![Svm, RandomForest, GbRegularized, GbLeafwise, AdaBoost]
        );
    }

    #[test]
    fn selection_on_separable_data_keeps_everything() {
        let dataset = toy_dataset(10, 50.0, 8);
        let candidates = vec![
            ClassifierSpec::new(ClassifierFamily::Knn).with_int("k", 3),
            ClassifierSpec::new(ClassifierFamily::RandomForest).with_int("n_estimators", 5),
        ];
        let outcome = select_base_classifiers(&candidates, &dataset, 5, 2, 0.70).unwrap();
        assert_eq!(outcome.selected.len(), 2);
        // canonical order puts the forest first
        assert_eq!(outcome.selected[0].family, ClassifierFamily::RandomForest);
        assert!(outcome.evaluations.iter().all(|e| e.kept));
    }

    #[test]
    fn empty_space_errors() {
        let space = SearchSpace {
            family: ClassifierFamily::Knn,
            dimensions: vec![("k".into(), Domain::Finite(vec![]))],
        };
        let dataset = toy_dataset(4, 5.0, 1);
        assert!(random_search(&space, 3, &dataset, 4, 0).is_err());
    }
}

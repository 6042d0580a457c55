//! The three-layer fusion architecture.
//!
//! Layer 1 is a screened ensemble of base classifiers fitted on the tier-1
//! cohort. Layer 2 is a network fitted on tier-2 subjects over the scaled
//! tier-2 features concatenated with every layer-1 member's probability
//! vector. Layer 3 is a network fitted on tier-3 subjects over the scaled
//! tier-3 features concatenated with the layer-2 output for that subject.
//! Upstream layers are trained once and applied frozen; the disjoint tier
//! partition keeps this leakage-free, which is asserted from content
//! fingerprints at train time.
//!
//! Scaling convention: every feature is standardized with the scaler of the
//! tier that introduced it (tier-1 features with the tier-1 scaler fitted on
//! the layer-1 cohort, and so on), so each model always sees inputs in the
//! scale it was trained in.

use std::collections::BTreeSet;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{fit_scaler, to_hex, Scaler, TierDataset};
use crate::learners::{
    fit_classifier, ClassifierFamily, ClassifierSpec, Probabilities, TrainedClassifier,
};
use crate::metrics::{binary_nash, macro_ovr_auc, roc_auc};
use crate::rng::derive_seed;
use crate::schema::{availability_tier, SteatosisGrade, SubjectRecord, Tier, GRADE_COUNT};
use crate::tuning::{
    cv_engine, random_search_with, select_base_classifiers, stratified_kfold, CVResult,
    SearchSpace, SelectionOutcome,
};

/// The screened, refitted first-layer ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer1Ensemble {
    /// Members in canonical family order.
    pub members: Vec<TrainedClassifier>,
    /// Tier-1 scaler fitted on the full layer-1 training cohort.
    pub scaler: Scaler,
    /// Content fingerprints of the training records.
    pub training_fingerprints: BTreeSet<String>,
}

impl Layer1Ensemble {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    /// Concatenated width of the member probability outputs.
    pub fn output_width(&self) -> usize {
        self.members.len() * GRADE_COUNT
    }

    /// Member outputs for one already-scaled tier-1 vector.
    pub fn outputs_for_scaled(&self, scaled: &[f64]) -> Result<Vec<Probabilities>> {
        self.members
            .iter()
            .map(|m| m.predict_proba(scaled))
            .collect()
    }

    /// Member outputs for a matrix of raw tier-1 columns, one row per
    /// subject.
    fn outputs_for_matrix(&self, tier1_raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let scaled = self.scaler.apply(tier1_raw)?;
        let mut out = Array2::zeros((scaled.nrows(), self.output_width()));
        for (i, row) in scaled.rows().into_iter().enumerate() {
            let row = row.as_slice().expect("contiguous rows");
            for (m, member) in self.members.iter().enumerate() {
                let p = member.predict_proba(row)?;
                for (c, &v) in p.as_slice().iter().enumerate() {
                    out[(i, m * GRADE_COUNT + c)] = v;
                }
            }
        }
        Ok(out)
    }
}

/// A meta-layer: the fitted network, the scaler for the layer's exclusive
/// raw features, and the input width it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaNetwork {
    pub tier: Tier,
    pub network: TrainedClassifier,
    pub exclusive_scaler: Scaler,
    pub input_width: usize,
    pub training_fingerprints: BTreeSet<String>,
}

/// Seeds, spec hashes, and data fingerprints for reproducibility checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub member_spec_hashes: Vec<String>,
    pub layer2_spec_hash: String,
    pub layer3_spec_hash: String,
    /// Hash over each tier's sorted record fingerprints.
    pub data_fingerprints: [String; 3],
}

pub fn spec_hash(spec: &ClassifierSpec) -> String {
    let mut h = Sha256::new();
    h.update(spec.canonical_string().as_bytes());
    to_hex(&h.finalize())
}

fn fingerprint_set_hash(set: &BTreeSet<String>) -> String {
    let mut h = Sha256::new();
    for f in set {
        h.update(f.as_bytes());
    }
    to_hex(&h.finalize())
}

/// The full fitted cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub layer1: Layer1Ensemble,
    pub layer2: MetaNetwork,
    pub layer3: MetaNetwork,
    pub provenance: Provenance,
}

/// One routed prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadePrediction {
    pub probabilities: Probabilities,
    pub label: SteatosisGrade,
    pub nash_probability: f64,
    pub layer_used: Tier,
}

fn prediction_from(probabilities: Probabilities, layer_used: Tier) -> CascadePrediction {
    let label = SteatosisGrade::new(probabilities.argmax() as u8).expect("argmax < 4");
    let nash_probability = 1.0 - probabilities.as_slice()[0];
    CascadePrediction {
        probabilities,
        label,
        nash_probability,
        layer_used,
    }
}

/// Soft vote over layer-1 member outputs: the arithmetic mean of the member
/// probability vectors.
pub fn aggregate_layer1(outputs: &[Probabilities]) -> Result<CascadePrediction> {
    if outputs.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut mean = vec![0.0; GRADE_COUNT];
    for p in outputs {
        for (slot, &v) in mean.iter_mut().zip(p.as_slice()) {
            *slot += v;
        }
    }
    for slot in &mut mean {
        *slot /= outputs.len() as f64;
    }
    Ok(prediction_from(Probabilities::from_raw(mean)?, Tier::One))
}

/// Member outputs for a record that has at least the tier-1 features,
/// in member order. Outputs depend only on the tier-1 restriction.
pub fn layer1_outputs(ensemble: &Layer1Ensemble, record: &SubjectRecord) -> Result<Vec<Probabilities>> {
    let raw = record.tier_vector(Tier::One)?;
    let scaled = ensemble.scaler.apply_row(&raw)?;
    ensemble.outputs_for_scaled(&scaled)
}

/// Train the first layer: screen the candidates on the tier-1 dataset, then
/// refit every survivor on all of it.
pub fn train_layer1(
    d1: &TierDataset,
    candidates: &[ClassifierSpec],
    k: usize,
    seed: u64,
    threshold: f64,
) -> Result<(Layer1Ensemble, SelectionOutcome)> {
    if d1.is_empty() {
        return Err(Error::EmptyTier(1));
    }
    let mut grades_present = [false; GRADE_COUNT];
    for g in &d1.labels {
        grades_present[g.index()] = true;
    }
    if grades_present.iter().any(|present| !present) {
        return Err(Error::DegenerateInput(
            "tier-1 dataset must contain all 4 grades".into(),
        ));
    }

    let selection =
        select_base_classifiers(candidates, d1, k, derive_seed(seed, "select", 0), threshold)?;
    if selection.selected.is_empty() {
        return Err(Error::NoClassifierSelected);
    }

    let scaler = fit_scaler(d1.matrix.view())?;
    let scaled = scaler.apply(d1.matrix.view())?;
    let y = d1.label_indices();
    let members: Vec<TrainedClassifier> = selection
        .selected
        .iter()
        .map(|spec| {
            fit_classifier(
                spec,
                scaled.view(),
                &y,
                GRADE_COUNT,
                derive_seed(seed, "member", spec.family.canonical_rank() as u64),
            )
        })
        .collect::<Result<_>>()?;

    Ok((
        Layer1Ensemble {
            members,
            scaler,
            training_fingerprints: d1.fingerprints(),
        },
        selection,
    ))
}

fn assert_disjoint(a: &BTreeSet<String>, b: &BTreeSet<String>, what: &str) -> Result<()> {
    if a.intersection(b).next().is_some() {
        return Err(Error::DatasetOverlap(what.to_string()));
    }
    Ok(())
}

/// Fold-independent prefix and tail around the fold-scaled exclusive block:
/// meta input rows are [prefix | scaled(exclusive_raw) | tail].
struct MetaAssembly {
    prefix: Array2<f64>,
    exclusive_raw: Array2<f64>,
    tail: Array2<f64>,
}

impl MetaAssembly {
    fn width(&self) -> usize {
        self.prefix.ncols() + self.exclusive_raw.ncols() + self.tail.ncols()
    }

    fn build(&self, scaler: &Scaler, idx: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((idx.len(), self.width()));
        let (p, e) = (self.prefix.ncols(), self.exclusive_raw.ncols());
        for (pos, &i) in idx.iter().enumerate() {
            out.slice_mut(s![pos, ..p]).assign(&self.prefix.row(i));
            let scaled = scaler.apply_row(self.exclusive_raw.row(i).as_slice().expect("row"))?;
            for (j, v) in scaled.into_iter().enumerate() {
                out[(pos, p + j)] = v;
            }
            out.slice_mut(s![pos, p + e..]).assign(&self.tail.row(i));
        }
        Ok(out)
    }

    fn gather_exclusive(&self, idx: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((idx.len(), self.exclusive_raw.ncols()));
        for (pos, &i) in idx.iter().enumerate() {
            m.row_mut(pos).assign(&self.exclusive_raw.row(i));
        }
        m
    }
}

/// Tune and fit one meta-network over an assembly: random search with k-fold
/// cross-validation (exclusive scaler refitted per training fold), then a
/// refit of the winner on all rows.
fn fit_meta_layer(
    assembly: &MetaAssembly,
    labels: &[usize],
    nn_space: &SearchSpace,
    k: usize,
    n_iter: usize,
    seed: u64,
) -> Result<(TrainedClassifier, Scaler, crate::tuning::SearchOutcome)> {
    if nn_space.family != ClassifierFamily::Mlp {
        return Err(Error::InvalidConfig(
            "meta-layer search space must be the MLP family".into(),
        ));
    }
    let plan = stratified_kfold(labels, k, derive_seed(seed, "plan", 0))?;
    let outcome = random_search_with(nn_space, n_iter, derive_seed(seed, "search", 0), |i, spec| {
        let cand_seed = derive_seed(seed, "cand-fit", i as u64);
        cv_engine(labels, GRADE_COUNT, &plan, |fold, train_idx, test_idx| {
            let excl_scaler = fit_scaler(assembly.gather_exclusive(train_idx).view())?;
            let x_train = assembly.build(&excl_scaler, train_idx)?;
            let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
            let model = fit_classifier(
                spec,
                x_train.view(),
                &y_train,
                GRADE_COUNT,
                derive_seed(cand_seed, "fold", fold as u64),
            )?;
            let x_test = assembly.build(&excl_scaler, test_idx)?;
            model.predict_proba_matrix(x_test.view())
        })
    })?;

    let all_rows: Vec<usize> = (0..labels.len()).collect();
    let exclusive_scaler = fit_scaler(assembly.gather_exclusive(&all_rows).view())?;
    let x_all = assembly.build(&exclusive_scaler, &all_rows)?;
    let network = fit_classifier(
        &outcome.best_spec,
        x_all.view(),
        labels,
        GRADE_COUNT,
        derive_seed(seed, "refit", 0),
    )?;
    Ok((network, exclusive_scaler, outcome))
}

/// Train the second layer on the tier-2 dataset, with layer 1 frozen.
pub fn train_layer2(
    layer1: &Layer1Ensemble,
    d2: &TierDataset,
    nn_space: &SearchSpace,
    k: usize,
    n_iter: usize,
    seed: u64,
) -> Result<(MetaNetwork, crate::tuning::SearchOutcome)> {
    if d2.is_empty() {
        return Err(Error::EmptyTier(2));
    }
    let fingerprints = d2.fingerprints();
    assert_disjoint(
        &layer1.training_fingerprints,
        &fingerprints,
        "tier-1 and tier-2 training records overlap",
    )?;

    let t1_width = Tier::One.width();
    let assembly = MetaAssembly {
        prefix: layer1
            .scaler
            .apply(d2.matrix.slice(s![.., ..t1_width]))?,
        exclusive_raw: d2.matrix.slice(s![.., t1_width..]).to_owned(),
        tail: layer1.outputs_for_matrix(d2.matrix.slice(s![.., ..t1_width]))?,
    };
    let expected_width = Tier::Two.width() + layer1.output_width();
    debug_assert_eq!(assembly.width(), expected_width);

    let labels = d2.label_indices();
    let (network, exclusive_scaler, outcome) =
        fit_meta_layer(&assembly, &labels, nn_space, k, n_iter, seed)?;
    Ok((
        MetaNetwork {
            tier: Tier::Two,
            network,
            exclusive_scaler,
            input_width: expected_width,
            training_fingerprints: fingerprints,
        },
        outcome,
    ))
}

/// Layer-2 outputs for tier-3 subjects: run the members on the tier-1
/// restriction, then the layer-2 network on the tier-2 restriction
/// concatenated with those outputs.
fn layer2_outputs_for_matrix(
    layer1: &Layer1Ensemble,
    layer2: &MetaNetwork,
    matrix: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let t1_width = Tier::One.width();
    let t2_width = Tier::Two.width();
    let t1_scaled = layer1.scaler.apply(matrix.slice(s![.., ..t1_width]))?;
    let excl2_scaled = layer2
        .exclusive_scaler
        .apply(matrix.slice(s![.., t1_width..t2_width]))?;
    let member_out = layer1.outputs_for_matrix(matrix.slice(s![.., ..t1_width]))?;

    let mut outputs = Array2::zeros((matrix.nrows(), GRADE_COUNT));
    let mut input = vec![0.0; layer2.input_width];
    for i in 0..matrix.nrows() {
        input.clear();
        input.extend(t1_scaled.row(i));
        input.extend(excl2_scaled.row(i));
        input.extend(member_out.row(i));
        let p = layer2.network.predict_proba(&input)?;
        for (c, &v) in p.as_slice().iter().enumerate() {
            outputs[(i, c)] = v;
        }
    }
    Ok(outputs)
}

/// Train the third layer on the tier-3 dataset, with layers 1 and 2 frozen.
pub fn train_layer3(
    layer1: &Layer1Ensemble,
    layer2: &MetaNetwork,
    d3: &TierDataset,
    nn_space: &SearchSpace,
    k: usize,
    n_iter: usize,
    seed: u64,
) -> Result<(MetaNetwork, crate::tuning::SearchOutcome)> {
    if d3.is_empty() {
        return Err(Error::EmptyTier(3));
    }
    let fingerprints = d3.fingerprints();
    assert_disjoint(
        &layer1.training_fingerprints,
        &fingerprints,
        "tier-1 and tier-3 training records overlap",
    )?;
    assert_disjoint(
        &layer2.training_fingerprints,
        &fingerprints,
        "tier-2 and tier-3 training records overlap",
    )?;

    let t1_width = Tier::One.width();
    let t2_width = Tier::Two.width();
    let prefix_t1 = layer1.scaler.apply(d3.matrix.slice(s![.., ..t1_width]))?;
    let prefix_excl2 = layer2
        .exclusive_scaler
        .apply(d3.matrix.slice(s![.., t1_width..t2_width]))?;
    let mut prefix = Array2::zeros((d3.len(), t2_width));
    prefix.slice_mut(s![.., ..t1_width]).assign(&prefix_t1);
    prefix.slice_mut(s![.., t1_width..]).assign(&prefix_excl2);

    let assembly = MetaAssembly {
        prefix,
        exclusive_raw: d3.matrix.slice(s![.., t2_width..]).to_owned(),
        tail: layer2_outputs_for_matrix(layer1, layer2, d3.matrix.view())?,
    };
    let expected_width = Tier::Three.width() + GRADE_COUNT;
    debug_assert_eq!(assembly.width(), expected_width);

    let labels = d3.label_indices();
    let (network, exclusive_scaler, outcome) =
        fit_meta_layer(&assembly, &labels, nn_space, k, n_iter, seed)?;
    Ok((
        MetaNetwork {
            tier: Tier::Three,
            network,
            exclusive_scaler,
            input_width: expected_width,
            training_fingerprints: fingerprints,
        },
        outcome,
    ))
}

impl CascadeModel {
    /// Route a record to the deepest layer its features satisfy and score it.
    pub fn predict(&self, record: &SubjectRecord) -> Result<CascadePrediction> {
        let tier = availability_tier(record)
            .ok_or_else(|| Error::InsufficientFeatures(record.id.clone()))?;

        let t1_raw = record.tier_vector(Tier::One)?;
        let t1_scaled = self.layer1.scaler.apply_row(&t1_raw)?;
        let member_outputs = self.layer1.outputs_for_scaled(&t1_scaled)?;
        if tier == Tier::One {
            return aggregate_layer1(&member_outputs);
        }

        let t2_raw = record.tier_vector(Tier::Two)?;
        let excl2_scaled = self
            .layer2
            .exclusive_scaler
            .apply_row(&t2_raw[Tier::One.width()..])?;
        let mut l2_input = Vec::with_capacity(self.layer2.input_width);
        l2_input.extend_from_slice(&t1_scaled);
        l2_input.extend_from_slice(&excl2_scaled);
        for p in &member_outputs {
            l2_input.extend_from_slice(p.as_slice());
        }
        if l2_input.len() != self.layer2.input_width {
            return Err(Error::DimensionMismatch {
                expected: self.layer2.input_width,
                got: l2_input.len(),
            });
        }
        let o2 = self.layer2.network.predict_proba(&l2_input)?;
        if tier == Tier::Two {
            return Ok(prediction_from(o2, Tier::Two));
        }

        let t3_raw = record.tier_vector(Tier::Three)?;
        let excl3_scaled = self
            .layer3
            .exclusive_scaler
            .apply_row(&t3_raw[Tier::Two.width()..])?;
        let mut l3_input = Vec::with_capacity(self.layer3.input_width);
        l3_input.extend_from_slice(&t1_scaled);
        l3_input.extend_from_slice(&excl2_scaled);
        l3_input.extend_from_slice(&excl3_scaled);
        l3_input.extend_from_slice(o2.as_slice());
        if l3_input.len() != self.layer3.input_width {
            return Err(Error::DimensionMismatch {
                expected: self.layer3.input_width,
                got: l3_input.len(),
            });
        }
        let o3 = self.layer3.network.predict_proba(&l3_input)?;
        Ok(prediction_from(o3, Tier::Three))
    }
}

/// Knobs for the end-to-end training driver.
#[derive(Debug, Clone)]
pub struct CascadeTrainingConfig {
    pub seed: u64,
    pub k: usize,
    pub threshold: f64,
    /// Random-search iterations per base-learner family.
    pub budget: usize,
    /// Random-search iterations per meta-layer.
    pub meta_budget: usize,
    /// Families screened for layer 1, with their search spaces.
    pub family_spaces: Vec<SearchSpace>,
    /// Meta-layer search space (MLP family).
    pub nn_space: SearchSpace,
}

impl CascadeTrainingConfig {
    /// Full standard spaces over all seven families.
    pub fn standard(seed: u64) -> CascadeTrainingConfig {
        CascadeTrainingConfig {
            seed,
            k: 10,
            threshold: 0.70,
            budget: 60,
            meta_budget: 60,
            family_spaces: crate::learners::ALL_FAMILIES
                .iter()
                .map(|&f| SearchSpace::standard(f))
                .collect(),
            nn_space: SearchSpace::standard(ClassifierFamily::Mlp),
        }
    }
}

/// Per-layer evaluation attached to the training report.
///
/// These are fresh cross-validations of each layer's final configuration
/// (fold plans drawn from a stream independent of the searches), so the
/// numbers carry no winner-selection bias.
#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub tier: Tier,
    pub cv: CVResult,
    /// AUC of the binary projection over the pooled out-of-fold predictions.
    pub nash_auc: f64,
    pub macro_ovr_auc: Option<f64>,
}

/// One family's search summary.
#[derive(Debug, Clone, Serialize)]
pub struct FamilySearch {
    pub family: ClassifierFamily,
    pub best_spec: ClassifierSpec,
    pub search_mean_accuracy: f64,
}

/// A family's screening outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ScreeningRow {
    pub spec: ClassifierSpec,
    pub mean_accuracy: f64,
    pub kept: bool,
}

/// Everything produced by one training run.
#[derive(Debug)]
pub struct TrainingArtifacts {
    pub model: CascadeModel,
    pub family_searches: Vec<FamilySearch>,
    pub screening: Vec<ScreeningRow>,
    pub layer_reports: [LayerReport; 3],
}

fn layer_report(tier: Tier, cv: CVResult, labels: &[SteatosisGrade]) -> Result<LayerReport> {
    let (bin_labels, scores) = binary_nash(labels, &cv.oof_probabilities);
    let nash_auc = roc_auc(&bin_labels, &scores)?.auc;
    let ovr = macro_ovr_auc(labels, &cv.oof_probabilities).ok();
    Ok(LayerReport {
        tier,
        cv,
        nash_auc,
        macro_ovr_auc: ovr,
    })
}

/// End-to-end training: per-family random search on the tier-1 dataset,
/// screening, the three layer fits, and fresh per-layer report CVs.
pub fn train_cascade(
    d1: &TierDataset,
    d2: &TierDataset,
    d3: &TierDataset,
    config: &CascadeTrainingConfig,
) -> Result<TrainingArtifacts> {
    let seed = config.seed;

    // Stage 1: tune each family on the tier-1 data.
    let mut family_searches = Vec::new();
    for space in &config.family_spaces {
        let (best_spec, result) = crate::tuning::random_search(
            space,
            config.budget,
            d1,
            config.k,
            derive_seed(seed, "family-search", space.family.canonical_rank() as u64),
        )?;
        family_searches.push(FamilySearch {
            family: space.family,
            best_spec,
            search_mean_accuracy: result.mean_accuracy,
        });
    }
    let candidates: Vec<ClassifierSpec> = family_searches
        .iter()
        .map(|f| f.best_spec.clone())
        .collect();

    // Stage 2: screen and refit the survivors.
    let (layer1, selection) = train_layer1(d1, &candidates, config.k, seed, config.threshold)?;
    let screening = selection
        .evaluations
        .iter()
        .map(|e| ScreeningRow {
            spec: e.spec.clone(),
            mean_accuracy: e.result.mean_accuracy,
            kept: e.kept,
        })
        .collect();

    // Stage 3 and 4: the meta-layers.
    let (layer2, l2_outcome) = train_layer2(
        &layer1,
        d2,
        &config.nn_space,
        config.k,
        config.meta_budget,
        derive_seed(seed, "layer2", 0),
    )?;
    let (layer3, _l3_outcome) = train_layer3(
        &layer1,
        &layer2,
        d3,
        &config.nn_space,
        config.k,
        config.meta_budget,
        derive_seed(seed, "layer3", 0),
    )?;

    let provenance = Provenance {
        seed,
        member_spec_hashes: layer1.members.iter().map(|m| spec_hash(&m.spec)).collect(),
        layer2_spec_hash: spec_hash(&layer2.network.spec),
        layer3_spec_hash: spec_hash(&layer3.network.spec),
        data_fingerprints: [
            fingerprint_set_hash(&layer1.training_fingerprints),
            fingerprint_set_hash(&layer2.training_fingerprints),
            fingerprint_set_hash(&layer3.training_fingerprints),
        ],
    };
    let model = CascadeModel {
        layer1,
        layer2,
        layer3,
        provenance,
    };
    let _ = l2_outcome;

    // Report CVs on fresh folds, one per layer.
    let layer_reports = [
        layer_report(
            Tier::One,
            report_cv_layer1(&model, d1, config.k, derive_seed(seed, "report-l1", 0))?,
            &d1.labels,
        )?,
        layer_report(
            Tier::Two,
            report_cv_layer2(&model, d2, config.k, derive_seed(seed, "report-l2", 0))?,
            &d2.labels,
        )?,
        layer_report(
            Tier::Three,
            report_cv_layer3(&model, d3, config.k, derive_seed(seed, "report-l3", 0))?,
            &d3.labels,
        )?,
    ];

    Ok(TrainingArtifacts {
        model,
        family_searches,
        screening,
        layer_reports,
    })
}

/// Fresh k-fold CV of the layer-1 soft vote: members refitted per fold on
/// the training rows, soft-voted on the held-out rows.
pub fn report_cv_layer1(
    model: &CascadeModel,
    d1: &TierDataset,
    k: usize,
    seed: u64,
) -> Result<CVResult> {
    let labels = d1.label_indices();
    let plan = stratified_kfold(&labels, k, derive_seed(seed, "plan", 0))?;
    let specs: Vec<ClassifierSpec> = model.layer1.members.iter().map(|m| m.spec.clone()).collect();
    cv_engine(&labels, GRADE_COUNT, &plan, |fold, train_idx, test_idx| {
        let train = crate::tuning::gather_rows(d1, train_idx);
        let scaler = fit_scaler(train.view())?;
        let scaled = scaler.apply(train.view())?;
        let y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let members: Vec<TrainedClassifier> = specs
            .iter()
            .map(|spec| {
                fit_classifier(
                    spec,
                    scaled.view(),
                    &y,
                    GRADE_COUNT,
                    derive_seed(
                        seed,
                        "fold-member",
                        (fold * 16 + spec.family.canonical_rank()) as u64,
                    ),
                )
            })
            .collect::<Result<_>>()?;
        let test = scaler.apply(crate::tuning::gather_rows(d1, test_idx).view())?;
        test.rows()
            .into_iter()
            .map(|row| {
                let row = row.as_slice().expect("contiguous rows");
                let outputs: Vec<Probabilities> = members
                    .iter()
                    .map(|m| m.predict_proba(row))
                    .collect::<Result<_>>()?;
                Ok(aggregate_layer1(&outputs)?.probabilities)
            })
            .collect()
    })
}

/// Fresh k-fold CV of the final layer-2 configuration, upstream frozen.
pub fn report_cv_layer2(
    model: &CascadeModel,
    d2: &TierDataset,
    k: usize,
    seed: u64,
) -> Result<CVResult> {
    let t1_width = Tier::One.width();
    let assembly = MetaAssembly {
        prefix: model
            .layer1
            .scaler
            .apply(d2.matrix.slice(s![.., ..t1_width]))?,
        exclusive_raw: d2.matrix.slice(s![.., t1_width..]).to_owned(),
        tail: model
            .layer1
            .outputs_for_matrix(d2.matrix.slice(s![.., ..t1_width]))?,
    };
    report_cv_meta(&assembly, &d2.label_indices(), &model.layer2.network.spec, k, seed)
}

/// Fresh k-fold CV of the final layer-3 configuration, upstream frozen.
pub fn report_cv_layer3(
    model: &CascadeModel,
    d3: &TierDataset,
    k: usize,
    seed: u64,
) -> Result<CVResult> {
    let t1_width = Tier::One.width();
    let t2_width = Tier::Two.width();
    let prefix_t1 = model
        .layer1
        .scaler
        .apply(d3.matrix.slice(s![.., ..t1_width]))?;
    let prefix_excl2 = model
        .layer2
        .exclusive_scaler
        .apply(d3.matrix.slice(s![.., t1_width..t2_width]))?;
    let mut prefix = Array2::zeros((d3.len(), t2_width));
    prefix.slice_mut(s![.., ..t1_width]).assign(&prefix_t1);
    prefix.slice_mut(s![.., t1_width..]).assign(&prefix_excl2);
    let assembly = MetaAssembly {
        prefix,
        exclusive_raw: d3.matrix.slice(s![.., t2_width..]).to_owned(),
        tail: layer2_outputs_for_matrix(&model.layer1, &model.layer2, d3.matrix.view())?,
    };
    report_cv_meta(&assembly, &d3.label_indices(), &model.layer3.network.spec, k, seed)
}

fn report_cv_meta(
    assembly: &MetaAssembly,
    labels: &[usize],
    spec: &ClassifierSpec,
    k: usize,
    seed: u64,
) -> Result<CVResult> {
    let plan = stratified_kfold(labels, k, derive_seed(seed, "plan", 0))?;
    cv_engine(labels, GRADE_COUNT, &plan, |fold, train_idx, test_idx| {
        let excl_scaler = fit_scaler(assembly.gather_exclusive(train_idx).view())?;
        let x_train = assembly.build(&excl_scaler, train_idx)?;
        let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let network = fit_classifier(
            spec,
            x_train.view(),
            &y_train,
            GRADE_COUNT,
            derive_seed(seed, "fold-fit", fold as u64),
        )?;
        network.predict_proba_matrix(assembly.build(&excl_scaler, test_idx)?.view())
    })
}

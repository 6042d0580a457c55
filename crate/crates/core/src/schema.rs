//! Canonical feature vocabulary, nested feature tiers, and the grade space.
//!
//! The registry is fixed: 22 features, of which `Sex` is the only categorical
//! one, arranged into three nested tiers. Tier 1 holds the 12 core laboratory
//! features, tier 2 adds the blood-count block, and tier 3 adds the
//! anthropometric block. Every other module routes subjects through this
//! vocabulary.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 22 recognised features, in canonical tier order.
///
/// Declaration order is the canonical ordering: tier-1 features first, then
/// the tier-2 additions, then the tier-3 additions. Matrix columns, scalers,
/// and serialized feature lists all follow this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    Age,
    Sex,
    #[serde(rename = "FBS")]
    Fbs,
    #[serde(rename = "AST")]
    Ast,
    #[serde(rename = "ALT")]
    Alt,
    BilT,
    BilD,
    #[serde(rename = "TG")]
    Tg,
    Chol,
    #[serde(rename = "LDL")]
    Ldl,
    #[serde(rename = "HDL")]
    Hdl,
    #[serde(rename = "ALB")]
    Alb,
    #[serde(rename = "WBC")]
    Wbc,
    #[serde(rename = "HB")]
    Hb,
    #[serde(rename = "PLT")]
    Plt,
    #[serde(rename = "FIB4")]
    Fib4,
    Height,
    Weight,
    #[serde(rename = "BMI")]
    Bmi,
    Waist,
    Hip,
    #[serde(rename = "WHRatio")]
    WhRatio,
}

/// Number of registered features.
pub const FEATURE_COUNT: usize = 22;

/// All features in canonical order.
pub const ALL_FEATURES: [Feature; FEATURE_COUNT] = [
    Feature::Age,
    Feature::Sex,
    Feature::Fbs,
    Feature::Ast,
    Feature::Alt,
    Feature::BilT,
    Feature::BilD,
    Feature::Tg,
    Feature::Chol,
    Feature::Ldl,
    Feature::Hdl,
    Feature::Alb,
    Feature::Wbc,
    Feature::Hb,
    Feature::Plt,
    Feature::Fib4,
    Feature::Height,
    Feature::Weight,
    Feature::Bmi,
    Feature::Waist,
    Feature::Hip,
    Feature::WhRatio,
];

impl Feature {
    /// Canonical column index (position in [`ALL_FEATURES`]).
    pub fn index(self) -> usize {
        self as usize
    }

    /// The exact token used in CSV headers and serialized feature lists.
    pub fn name(self) -> &'static str {
        match self {
            Feature::Age => "Age",
            Feature::Sex => "Sex",
            Feature::Fbs => "FBS",
            Feature::Ast => "AST",
            Feature::Alt => "ALT",
            Feature::BilT => "BilT",
            Feature::BilD => "BilD",
            Feature::Tg => "TG",
            Feature::Chol => "Chol",
            Feature::Ldl => "LDL",
            Feature::Hdl => "HDL",
            Feature::Alb => "ALB",
            Feature::Wbc => "WBC",
            Feature::Hb => "HB",
            Feature::Plt => "PLT",
            Feature::Fib4 => "FIB4",
            Feature::Height => "Height",
            Feature::Weight => "Weight",
            Feature::Bmi => "BMI",
            Feature::Waist => "Waist",
            Feature::Hip => "Hip",
            Feature::WhRatio => "WHRatio",
        }
    }

    /// Look a feature up by its exact header token.
    pub fn from_name(name: &str) -> Option<Feature> {
        ALL_FEATURES.iter().copied().find(|f| f.name() == name)
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            Feature::Sex => FeatureKind::Categorical,
            _ => FeatureKind::Continuous,
        }
    }

    /// Measurement unit, informational only.
    pub fn unit(self) -> &'static str {
        match self {
            Feature::Age => "years",
            Feature::Sex => "-",
            Feature::Wbc => "mm^3",
            Feature::Hb => "g/dL",
            Feature::Plt => "uL",
            Feature::Fib4 => "-",
            Feature::Fbs | Feature::Tg | Feature::Chol | Feature::Ldl | Feature::Hdl => "mg/dL",
            Feature::Ast | Feature::Alt => "IU/L",
            Feature::BilT | Feature::BilD => "mg/dL",
            Feature::Alb => "g/dL",
            Feature::Height | Feature::Waist | Feature::Hip => "cm",
            Feature::Weight => "kg",
            Feature::Bmi => "kg/m^2",
            Feature::WhRatio => "-",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

/// Descriptor for one registry entry.
#[derive(Debug, Clone, Serialize)]
pub struct FeatureDescriptor {
    pub name: &'static str,
    pub kind: FeatureKind,
    pub unit: &'static str,
}

/// The full registry in canonical order.
pub fn registry() -> Vec<FeatureDescriptor> {
    ALL_FEATURES
        .iter()
        .map(|f| FeatureDescriptor {
            name: f.name(),
            kind: f.kind(),
            unit: f.unit(),
        })
        .collect()
}

/// One of the three nested feature tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    One,
    Two,
    Three,
}

pub const ALL_TIERS: [Tier; 3] = [Tier::One, Tier::Two, Tier::Three];

impl Tier {
    pub fn as_u8(self) -> u8 {
        match self {
            Tier::One => 1,
            Tier::Two => 2,
            Tier::Three => 3,
        }
    }

    pub fn from_u8(v: u8) -> Option<Tier> {
        match v {
            1 => Some(Tier::One),
            2 => Some(Tier::Two),
            3 => Some(Tier::Three),
            _ => None,
        }
    }

    /// Number of features in this tier's set.
    pub fn width(self) -> usize {
        match self {
            Tier::One => 12,
            Tier::Two => 16,
            Tier::Three => 22,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// An ordered, named feature set for one tier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSet {
    pub tier: Tier,
    pub features: &'static [Feature],
}

/// The canonical ordered feature set for a tier.
///
/// The sets are strictly nested: tier 1 is a prefix of tier 2, which is a
/// prefix of tier 3, so shared features keep identical positions everywhere.
pub fn feature_set(tier: Tier) -> FeatureSet {
    FeatureSet {
        tier,
        features: &ALL_FEATURES[..tier.width()],
    }
}

/// Ultrasound steatosis grade, 0 (absent) through 3 (severe).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SteatosisGrade(u8);

/// Number of grades (classes) in the staging task.
pub const GRADE_COUNT: usize = 4;

impl SteatosisGrade {
    pub fn new(value: u8) -> Result<SteatosisGrade> {
        if value <= 3 {
            Ok(SteatosisGrade(value))
        } else {
            Err(Error::InvalidConfig(format!(
                "grade {value} out of range 0..=3"
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    /// Binary projection: grade 0 is negative, grades 1-3 are positive.
    pub fn is_nash(self) -> bool {
        self.0 >= 1
    }
}

impl TryFrom<u8> for SteatosisGrade {
    type Error = Error;
    fn try_from(v: u8) -> Result<SteatosisGrade> {
        SteatosisGrade::new(v)
    }
}

impl From<SteatosisGrade> for u8 {
    fn from(g: SteatosisGrade) -> u8 {
        g.0
    }
}

impl fmt::Display for SteatosisGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A partial assignment of values to registered features.
///
/// `Sex` is stored post-encoding: 0.0 for F, 1.0 for M.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMap {
    values: [Option<f64>; FEATURE_COUNT],
}

impl FeatureMap {
    pub fn new() -> FeatureMap {
        FeatureMap::default()
    }

    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.values[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        self.values[feature.index()] = Some(value);
    }

    pub fn unset(&mut self, feature: Feature) {
        self.values[feature.index()] = None;
    }

    pub fn contains(&self, feature: Feature) -> bool {
        self.values[feature.index()].is_some()
    }

    pub fn len(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|v| v.is_none())
    }

    /// Present (feature, value) pairs in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Feature, f64)> + '_ {
        ALL_FEATURES
            .iter()
            .filter_map(|&f| self.values[f.index()].map(|v| (f, v)))
    }
}

/// One subject: identifier, partial feature values, optional grade label.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub values: FeatureMap,
    pub label: Option<SteatosisGrade>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            values: FeatureMap::new(),
            label: None,
        }
    }

    /// Extract this record's values for a tier's feature set, in canonical
    /// order. Errors if any feature of the set is missing.
    pub fn tier_vector(&self, tier: Tier) -> Result<Vec<f64>> {
        let set = feature_set(tier);
        set.features
            .iter()
            .map(|&f| {
                self.values
                    .get(f)
                    .ok_or_else(|| Error::InsufficientFeatures(self.id.clone()))
            })
            .collect()
    }
}

/// The largest tier whose feature set this record satisfies in full, or
/// `None` when even the tier-1 set is incomplete.
///
/// Because the sets are nested, this rule partitions any cohort into
/// disjoint tier datasets.
pub fn availability_tier(record: &SubjectRecord) -> Option<Tier> {
    let mut best = None;
    for tier in ALL_TIERS {
        let complete = feature_set(tier)
            .features
            .iter()
            .all(|&f| record.values.contains(f));
        if complete {
            best = Some(tier);
        } else {
            // Nesting means no higher tier can be complete either.
            break;
        }
    }
    best
}

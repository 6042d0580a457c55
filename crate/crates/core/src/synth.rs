//! Synthetic labeled cohorts with class-conditional Gaussian features,
//! configurable tier availability, and tunable signal placement.
//!
//! Each subject draws a grade and all 22 features from grade-conditional
//! distributions, then a tier is assigned and every feature above that tier
//! is deleted. The shipped presets: a template cohort whose exact
//! (grade, tier) counts match the reference partition, an incremental-signal
//! benchmark where deeper tiers carry progressively stronger separation, and
//! a null cohort with no signal at all.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CSV_COLUMNS;
use crate::rng;
use crate::schema::{
    Feature, FeatureKind, SteatosisGrade, SubjectRecord, Tier, ALL_FEATURES, ALL_TIERS,
    GRADE_COUNT,
};

/// Per-grade per-feature Gaussian parameters plus cohort shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub seed: u64,
    /// P(grade) for grades 0..=3; must sum to 1.
    pub grade_prevalence: [f64; GRADE_COUNT],
    /// P(tier) for tiers 1..=3; must sum to 1.
    pub tier_proportions: [f64; 3],
    /// Exact subjects per (grade, tier); overrides the probabilistic draws
    /// when present. `exact_counts[grade][tier]`.
    #[serde(default)]
    pub exact_counts: Option<[[usize; 3]; GRADE_COUNT]>,
    /// P(Sex = M | grade).
    pub sex_probability: [f64; GRADE_COUNT],
    /// Continuous feature name -> per-grade mean.
    pub feature_means: BTreeMap<String, [f64; GRADE_COUNT]>,
    /// Continuous feature name -> per-grade std (> 0).
    pub feature_stds: BTreeMap<String, [f64; GRADE_COUNT]>,
    /// Which tiers' exclusive features carry grade-dependent means
    /// (provenance of how the tables above were built).
    pub signal_tiers: [bool; 3],
}

/// Baseline mean and std for each continuous feature, in plausible clinical
/// ranges. Signal presets shift the means per grade on top of these.
const BASELINES: [(Feature, f64, f64); 21] = [
    (Feature::Age, 45.0, 12.0),
    (Feature::Fbs, 95.0, 15.0),
    (Feature::Ast, 28.0, 12.0),
    (Feature::Alt, 30.0, 15.0),
    (Feature::BilT, 0.8, 0.3),
    (Feature::BilD, 0.2, 0.1),
    (Feature::Tg, 140.0, 60.0),
    (Feature::Chol, 185.0, 35.0),
    (Feature::Ldl, 110.0, 30.0),
    (Feature::Hdl, 48.0, 12.0),
    (Feature::Alb, 4.4, 0.4),
    (Feature::Wbc, 7000.0, 1800.0),
    (Feature::Hb, 14.0, 1.5),
    (Feature::Plt, 250000.0, 60000.0),
    (Feature::Fib4, 1.2, 0.6),
    (Feature::Height, 168.0, 9.0),
    (Feature::Weight, 78.0, 14.0),
    (Feature::Bmi, 27.0, 4.5),
    (Feature::Waist, 95.0, 12.0),
    (Feature::Hip, 103.0, 10.0),
    (Feature::WhRatio, 0.92, 0.07),
];

/// Features that carry the grade signal when their tier's flag is on,
/// with the per-grade-step shift in units of the baseline std.
const SIGNAL_PLAN: [(Feature, Tier, f64); 13] = [
    (Feature::Fbs, Tier::One, 1.0),
    (Feature::Ast, Tier::One, 1.15),
    (Feature::Alt, Tier::One, 1.15),
    (Feature::Tg, Tier::One, 1.0),
    (Feature::Hdl, Tier::One, -0.8),
    (Feature::Wbc, Tier::Two, 0.8),
    (Feature::Plt, Tier::Two, -0.8),
    (Feature::Fib4, Tier::Two, 0.9),
    (Feature::Hb, Tier::Two, 0.6),
    (Feature::Bmi, Tier::Three, 1.0),
    (Feature::Waist, Tier::Three, 1.0),
    (Feature::WhRatio, Tier::Three, 1.0),
    (Feature::Weight, Tier::Three, 0.9),
];

fn signal_tables(
    signal_tiers: [bool; 3],
) -> (
    BTreeMap<String, [f64; GRADE_COUNT]>,
    BTreeMap<String, [f64; GRADE_COUNT]>,
) {
    let mut means = BTreeMap::new();
    let mut stds = BTreeMap::new();
    for (feature, mean, std) in BASELINES {
        let mut per_grade = [mean; GRADE_COUNT];
        if let Some(&(_, tier, strength)) = SIGNAL_PLAN.iter().find(|(f, _, _)| *f == feature) {
            if signal_tiers[tier as usize] {
                for (g, slot) in per_grade.iter_mut().enumerate() {
                    *slot = mean + strength * std * g as f64;
                }
            }
        }
        means.insert(feature.name().to_string(), per_grade);
        stds.insert(feature.name().to_string(), [std; GRADE_COUNT]);
    }
    (means, stds)
}

impl SynthConfig {
    /// Cohort whose (grade, tier) counts exactly match the reference
    /// partition template: tiers of 965/505/342 subjects with tier-1 grade
    /// counts 457/149/238/121.
    pub fn table_template(seed: u64) -> SynthConfig {
        let exact: [[usize; 3]; GRADE_COUNT] = [
            [457, 145, 50],
            [149, 127, 58],
            [238, 112, 70],
            [121, 121, 164],
        ];
        let size = exact.iter().flatten().sum();
        let (feature_means, feature_stds) = signal_tables([true, true, true]);
        SynthConfig {
            size,
            seed,
            grade_prevalence: [
                652.0 / 1812.0,
                334.0 / 1812.0,
                420.0 / 1812.0,
                406.0 / 1812.0,
            ],
            tier_proportions: [965.0 / 1812.0, 505.0 / 1812.0, 342.0 / 1812.0],
            exact_counts: Some(exact),
            sex_probability: [0.5; GRADE_COUNT],
            feature_means,
            feature_stds,
            signal_tiers: [true, true, true],
        }
    }

    /// Balanced benchmark cohort where tier-1 features separate the grades
    /// moderately and tier-2/tier-3 exclusive features add progressively
    /// stronger separation, so each cascade layer has headroom over the one
    /// below it.
    pub fn incremental_signal(size: usize, seed: u64) -> SynthConfig {
        let (feature_means, feature_stds) = signal_tables([true, true, true]);
        SynthConfig {
            size,
            seed,
            grade_prevalence: [0.25; GRADE_COUNT],
            tier_proportions: [0.53, 0.28, 0.19],
            exact_counts: None,
            sex_probability: [0.5; GRADE_COUNT],
            feature_means,
            feature_stds,
            signal_tiers: [true, true, true],
        }
    }

    /// Control cohort with identical feature distributions across grades.
    pub fn null_signal(size: usize, seed: u64) -> SynthConfig {
        let (feature_means, feature_stds) = signal_tables([false, false, false]);
        SynthConfig {
            size,
            seed,
            grade_prevalence: [0.25; GRADE_COUNT],
            tier_proportions: [0.53, 0.28, 0.19],
            exact_counts: None,
            sex_probability: [0.5; GRADE_COUNT],
            feature_means,
            feature_stds,
            signal_tiers: [false, false, false],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidConfig("size must be >= 1".into()));
        }
        let prev_sum: f64 = self.grade_prevalence.iter().sum();
        if (prev_sum - 1.0).abs() > 1e-9 || self.grade_prevalence.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grade prevalence must be a distribution, sums to {prev_sum}"
            )));
        }
        let tier_sum: f64 = self.tier_proportions.iter().sum();
        if (tier_sum - 1.0).abs() > 1e-9 || self.tier_proportions.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tier proportions must be a distribution, sums to {tier_sum}"
            )));
        }
        if self
            .sex_probability
            .iter()
            .any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::InvalidConfig("sex probability outside [0,1]".into()));
        }
        for feature in ALL_FEATURES {
            if feature.kind() != FeatureKind::Continuous {
                continue;
            }
            let name = feature.name();
            if !self.feature_means.contains_key(name) {
                return Err(Error::InvalidConfig(format!("missing means for {name}")));
            }
            let stds = self
                .feature_stds
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing stds for {name}")))?;
            if stds.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::InvalidConfig(format!("stds for {name} must be > 0")));
            }
        }
        if let Some(exact) = &self.exact_counts {
            let total: usize = exact.iter().flatten().sum();
            if total != self.size {
                return Err(Error::InvalidConfig(format!(
                    "exact counts sum to {total}, size is {}",
                    self.size
                )));
            }
        }
        Ok(())
    }
}

fn draw_categorical(probs: &[f64], stream: &mut rand_chacha::ChaCha8Rng) -> usize {
    let u: f64 = stream.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generate the cohort. Deterministic in the config (including its seed).
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<SubjectRecord>> {
    config.validate()?;
    let mut stream = rng::substream(config.seed, "cohort", 0);

    // Assign (grade, tier) per subject first, then draw features.
    let assignments: Vec<(usize, Tier)> = match &config.exact_counts {
        Some(exact) => {
            let mut pairs = Vec::with_capacity(config.size);
            for (grade, per_tier) in exact.iter().enumerate() {
                for (t, &count) in per_tier.iter().enumerate() {
                    pairs.extend(std::iter::repeat_n((grade, ALL_TIERS[t]), count));
                }
            }
            use rand::seq::SliceRandom;
            pairs.shuffle(&mut stream);
            pairs
        }
        None => (0..config.size)
            .map(|_| {
                let grade = draw_categorical(&config.grade_prevalence, &mut stream);
                let tier = ALL_TIERS[draw_categorical(&config.tier_proportions, &mut stream)];
                (grade, tier)
            })
            .collect(),
    };

    let width = format!("{}", config.size).len().max(4);
    let mut records = Vec::with_capacity(config.size);
    for (i, &(grade, tier)) in assignments.iter().enumerate() {
        let mut record = SubjectRecord::new(format!("S{:0width$}", i + 1));
        record.label = Some(SteatosisGrade::new(grade as u8).expect("grade in range"));
        let male: bool = stream.random::<f64>() < config.sex_probability[grade];
        record.values.set(Feature::Sex, f64::from(male));
        for feature in ALL_FEATURES {
            if feature.kind() != FeatureKind::Continuous {
                continue;
            }
            let mean = config.feature_means[feature.name()][grade];
            let std = config.feature_stds[feature.name()][grade];
            let normal = Normal::new(mean, std).expect("std validated positive");
            record.values.set(feature, normal.sample(&mut stream));
        }
        // Tier assignment deletes everything above the tier.
        for &feature in &ALL_FEATURES[tier.width()..] {
            record.values.unset(feature);
        }
        debug_assert_eq!(crate::schema::availability_tier(&record), Some(tier));
        records.push(record);
    }
    Ok(records)
}

/// Write records in the exact cohort CSV format the ingest module reads.
pub fn write_cohort_csv<W: Write>(records: &[SubjectRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(CSV_COLUMNS)
        .map_err(|e| Error::Unreadable(e.to_string()))?;
    for record in records {
        let mut row: Vec<String> = Vec::with_capacity(CSV_COLUMNS.len());
        row.push(record.id.clone());
        for column in &CSV_COLUMNS[1..CSV_COLUMNS.len() - 1] {
            let feature = Feature::from_name(column).expect("column registry");
            let cell = match record.values.get(feature) {
                None => String::new(),
                Some(v) if feature == Feature::Sex => {
                    if v == 1.0 {
                        "M".into()
                    } else {
                        "F".into()
                    }
                }
                Some(v) => format!("{v}"),
            };
            row.push(cell);
        }
        row.push(record.label.map(|g| g.to_string()).unwrap_or_default());
        writer
            .write_record(&row)
            .map_err(|e| Error::Unreadable(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::Unreadable(e.to_string()))?;
    Ok(())
}

/// Convenience: the full CSV as a string.
pub fn cohort_csv(records: &[SubjectRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_cohort_csv(records, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Unreadable(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_cohort, partition_tiers};
    use crate::schema::feature_set;

    #[test]
    fn template_cohort_partitions_exactly() {
        let config = SynthConfig::table_template(42);
        let records = generate_cohort(&config).unwrap();
        assert_eq!(records.len(), 1812);
        let (d1, d2, d3, report) = partition_tiers(&records).unwrap();
        assert_eq!((d1.len(), d2.len(), d3.len()), (965, 505, 342));
        assert_eq!(report.grade_counts[0], [457, 149, 238, 121]);
        assert_eq!(report.grade_counts[1], [145, 127, 112, 121]);
        assert_eq!(report.grade_counts[2], [50, 58, 70, 164]);
    }

    #[test]
    fn same_seed_gives_identical_csv() {
        let config = SynthConfig::incremental_signal(200, 7);
        let a = cohort_csv(&generate_cohort(&config).unwrap()).unwrap();
        let b = cohort_csv(&generate_cohort(&config).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = SynthConfig::incremental_signal(200, 8);
        let c = cohort_csv(&generate_cohort(&other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_csv_reparses_without_rejects() {
        let config = SynthConfig::incremental_signal(300, 3);
        let records = generate_cohort(&config).unwrap();
        let csv = cohort_csv(&records).unwrap();
        let (parsed, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert_eq!(parsed.len(), records.len());
        assert!(report.rejected.is_empty());
        assert_eq!(parsed, records);
    }

    #[test]
    fn tier_deletion_only_removes_exclusive_features() {
        let config = SynthConfig::incremental_signal(400, 5);
        let records = generate_cohort(&config).unwrap();
        let mut saw_tier2 = false;
        for record in &records {
            if crate::schema::availability_tier(record) == Some(Tier::Two) {
                saw_tier2 = true;
                for &f in feature_set(Tier::Two).features {
                    assert!(record.values.contains(f), "{} missing", f.name());
                }
                for &f in &ALL_FEATURES[16..] {
                    assert!(!record.values.contains(f));
                }
            }
        }
        assert!(saw_tier2);
    }

    #[test]
    fn empirical_means_converge_to_configured() {
        // n >= 1000 per grade for tier-1 features; check within 4*std/sqrt(n).
        let mut config = SynthConfig::incremental_signal(4800, 11);
        config.exact_counts = Some([[636, 336, 228]; 4]);
        let records = generate_cohort(&config).unwrap();
        for feature in [Feature::Ast, Feature::Tg] {
            for grade in 0..GRADE_COUNT {
                let values: Vec<f64> = records
                    .iter()
                    .filter(|r| r.label.map(|g| g.index()) == Some(grade))
                    .filter_map(|r| r.values.get(feature))
                    .collect();
                assert!(values.len() >= 1000);
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let expected = config.feature_means[feature.name()][grade];
                let std = config.feature_stds[feature.name()][grade];
                let bound = 4.0 * std / (values.len() as f64).sqrt();
                assert!(
                    (mean - expected).abs() < bound,
                    "{} grade {grade}: {mean} vs {expected} (bound {bound})",
                    feature.name()
                );
            }
        }
    }

    #[test]
    fn null_config_has_grade_independent_means() {
        let config = SynthConfig::null_signal(10, 0);
        for per_grade in config.feature_means.values() {
            assert!(per_grade.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut config = SynthConfig::incremental_signal(100, 0);
        config.size = 0;
        assert!(config.validate().is_err());

        let mut config = SynthConfig::incremental_signal(100, 0);
        config.grade_prevalence = [0.5, 0.5, 0.5, 0.5];
        assert!(config.validate().is_err());

        let mut config = SynthConfig::incremental_signal(100, 0);
        config.tier_proportions = [0.9, 0.2, 0.1];
        assert!(config.validate().is_err());

        let mut config = SynthConfig::incremental_signal(100, 0);
        config.feature_stds.insert("AST".into(), [0.0; 4]);
        assert!(config.validate().is_err());

        let mut config = SynthConfig::incremental_signal(100, 0);
        config.exact_counts = Some([[10, 10, 10]; 4]);
        assert!(config.validate().is_err()); // 120 != 100
    }

    #[test]
    fn config_json_round_trips() {
        let config = SynthConfig::table_template(9);
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: SynthConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }
}

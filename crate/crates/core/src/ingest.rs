//! Cohort CSV parsing, tier partitioning, and z-score scaling.
//!
//! Parsing is forgiving at the row level: malformed rows are reported and
//! skipped, never abort the run. Only an unreadable source or a broken
//! header is fatal. Partitioning assigns each labeled record to the largest
//! tier it satisfies, which makes the three tier datasets a disjoint cover
//! of the accepted cohort.

use std::collections::BTreeSet;
use std::io::Read;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schema::{
    availability_tier, Feature, SteatosisGrade, SubjectRecord, Tier, ALL_TIERS, GRADE_COUNT,
};

/// The exact header tokens accepted in cohort CSV files, in file order.
pub const CSV_COLUMNS: [&str; 24] = [
    "id", "Age", "Sex", "WBC", "HB", "PLT", "FIB4", "FBS", "AST", "ALT", "BilT", "BilD", "TG",
    "Chol", "LDL", "HDL", "ALB", "Height", "Weight", "BMI", "Waist", "Hip", "WHRatio", "Grade",
];

/// Why a row was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    /// Zero-based data-row index (header excluded).
    pub row: usize,
    pub reason: String,
}

/// Outcome summary for parsing or partitioning.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RowReject>,
    /// Subjects per tier, indexed 0..3 for tiers 1..3.
    pub tier_counts: [usize; 3],
    /// Subjects per tier per grade: `grade_counts[tier][grade]`.
    pub grade_counts: [[usize; GRADE_COUNT]; 3],
}

impl IngestReport {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected.len()
    }
}

/// One tier's complete, label-aligned training matrix.
#[derive(Debug, Clone)]
pub struct TierDataset {
    pub tier: Tier,
    /// Rows are subjects, columns follow `feature_set(tier)` order.
    pub matrix: Array2<f64>,
    pub labels: Vec<SteatosisGrade>,
    pub ids: Vec<String>,
}

impl TierDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels as class indices.
    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|g| g.index()).collect()
    }

    /// Per-record content fingerprints (id + features + label), hex encoded.
    ///
    /// Used to assert that the three layers of a cascade were trained on
    /// pairwise disjoint subjects.
    pub fn fingerprints(&self) -> BTreeSet<String> {
        (0..self.len())
            .map(|i| {
                let mut h = Sha256::new();
                h.update(self.ids[i].as_bytes());
                h.update([0xff, self.labels[i].value()]);
                for v in self.matrix.row(i) {
                    h.update(v.to_bits().to_le_bytes());
                }
                to_hex(&h.finalize())
            })
            .collect()
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse a cohort CSV into subject records.
///
/// Empty cells are missing values; `Sex` is encoded F=0, M=1; `Grade` may be
/// empty for unlabeled prediction inputs. Row-level problems land in the
/// report's reject list with a reason.
pub fn parse_cohort<R: Read>(source: R) -> Result<(Vec<SubjectRecord>, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::Unreadable(e.to_string()))?
        .clone();
    if headers.is_empty() || !headers.iter().any(|h| h == "id") {
        return Err(Error::BadHeader(
            "header row must contain an `id` column".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for h in headers.iter() {
        if !seen.insert(h) {
            return Err(Error::BadHeader(format!("duplicate column `{h}`")));
        }
    }
    // A header token outside the vocabulary poisons every row rather than
    // aborting the run, keeping accepted + rejected == total.
    let unknown: Vec<&str> = headers
        .iter()
        .filter(|h| *h != "id" && *h != "Grade" && Feature::from_name(h).is_none())
        .collect();

    let mut records = Vec::new();
    let mut report = IngestReport::default();

    for (row_idx, row) in reader.records().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(RowReject {
                    row: row_idx,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        if let Some(name) = unknown.first() {
            report.rejected.push(RowReject {
                row: row_idx,
                reason: format!("unknown column \"{name}\""),
            });
            continue;
        }
        match parse_row(&headers, &row, row_idx) {
            Ok(record) => {
                records.push(record);
                report.accepted += 1;
            }
            Err(reason) => report.rejected.push(RowReject {
                row: row_idx,
                reason,
            }),
        }
    }
    Ok((records, report))
}

fn parse_row(
    headers: &csv::StringRecord,
    row: &csv::StringRecord,
    row_idx: usize,
) -> std::result::Result<SubjectRecord, String> {
    if row.len() != headers.len() {
        return Err(format!(
            "column count mismatch: expected {}, got {}",
            headers.len(),
            row.len()
        ));
    }
    let mut record = SubjectRecord::new(format!("row{row_idx}"));
    for (name, cell) in headers.iter().zip(row.iter()) {
        let cell = cell.trim();
        if cell.is_empty() {
            continue; // missing, not invalid
        }
        match name {
            "id" => record.id = cell.to_string(),
            "Grade" => {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| format!("non-numeric Grade \"{cell}\""))?;
                if v.fract() != 0.0 {
                    return Err(format!("non-integer Grade \"{cell}\""));
                }
                if !(0.0..=3.0).contains(&v) {
                    return Err("label out of range".to_string());
                }
                record.label = Some(SteatosisGrade::new(v as u8).expect("range checked"));
            }
            "Sex" => {
                let encoded = match cell {
                    "F" => 0.0,
                    "M" => 1.0,
                    other => return Err(format!("invalid Sex \"{other}\"")),
                };
                record.values.set(Feature::Sex, encoded);
            }
            _ => {
                let feature = Feature::from_name(name).expect("unknown headers filtered");
                let v: f64 = cell
                    .parse()
                    .map_err(|_| format!("non-numeric {name} \"{cell}\""))?;
                if !v.is_finite() {
                    return Err(format!("non-finite {name} \"{cell}\""));
                }
                record.values.set(feature, v);
            }
        }
    }
    Ok(record)
}

/// Split labeled records into the three tier datasets.
///
/// Each record goes to exactly one dataset, chosen by [`availability_tier`].
/// Records without a label or without the tier-1 minimum are rejected and
/// reported.
pub fn partition_tiers(
    records: &[SubjectRecord],
) -> Result<(TierDataset, TierDataset, TierDataset, IngestReport)> {
    let mut report = IngestReport::default();
    let mut rows: [Vec<Vec<f64>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut labels: [Vec<SteatosisGrade>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut ids: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    for (idx, record) in records.iter().enumerate() {
        let Some(label) = record.label else {
            report.rejected.push(RowReject {
                row: idx,
                reason: "unlabeled record".into(),
            });
            continue;
        };
        let Some(tier) = availability_tier(record) else {
            report.rejected.push(RowReject {
                row: idx,
                reason: "tier-1 features incomplete".into(),
            });
            continue;
        };
        let t = tier as usize;
        rows[t].push(record.tier_vector(tier)?);
        labels[t].push(label);
        ids[t].push(record.id.clone());
        report.accepted += 1;
        report.tier_counts[t] += 1;
        report.grade_counts[t][label.index()] += 1;
    }

    let mut datasets = Vec::with_capacity(3);
    for (t, tier) in ALL_TIERS.into_iter().enumerate() {
        let width = tier.width();
        let flat: Vec<f64> = rows[t].iter().flatten().copied().collect();
        let matrix = Array2::from_shape_vec((labels[t].len(), width), flat)
            .expect("row width equals tier width");
        datasets.push(TierDataset {
            tier,
            matrix,
            labels: std::mem::take(&mut labels[t]),
            ids: std::mem::take(&mut ids[t]),
        });
    }
    let d3 = datasets.pop().expect("three datasets");
    let d2 = datasets.pop().expect("three datasets");
    let d1 = datasets.pop().expect("three datasets");
    Ok((d1, d2, d3, report))
}

/// Per-feature standardization statistics, population convention (divisor n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose training column was constant; they scale to 0.
    pub degenerate: Vec<bool>,
    /// Std divisor convention, recorded for round-trip fidelity.
    pub convention: StdConvention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StdConvention {
    Population,
}

/// Fit per-column mean and population standard deviation.
pub fn fit_scaler(matrix: ArrayView2<'_, f64>) -> Result<Scaler> {
    let (rows, cols) = matrix.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }
    let n = rows as f64;
    let mut mean = vec![0.0; cols];
    let mut std = vec![0.0; cols];
    let mut degenerate = vec![false; cols];
    for j in 0..cols {
        let col = matrix.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        std[j] = var.sqrt();
        degenerate[j] = std[j] == 0.0;
    }
    Ok(Scaler {
        mean,
        std,
        degenerate,
        convention: StdConvention::Population,
    })
}

impl Scaler {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Standardize a full matrix: x' = (x - mean) / std, degenerate -> 0.
    pub fn apply(&self, matrix: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (rows, cols) = matrix.dim();
        if cols != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                got: cols,
            });
        }
        let mut out = Array2::zeros((rows, cols));
        for j in 0..cols {
            if self.degenerate[j] {
                continue;
            }
            let (m, s) = (self.mean[j], self.std[j]);
            for i in 0..rows {
                out[(i, j)] = (matrix[(i, j)] - m) / s;
            }
        }
        Ok(out)
    }

    /// Standardize a single row vector.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: self.width(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if self.degenerate[j] {
                    0.0
                } else {
                    (v - self.mean[j]) / self.std[j]
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::feature_set;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn full_header() -> String {
        CSV_COLUMNS.join(",")
    }

    fn full_row(id: &str, grade: &str) -> String {
        // id,Age,Sex,WBC,HB,PLT,FIB4,FBS,AST,ALT,BilT,BilD,TG,Chol,LDL,HDL,ALB,
        // Height,Weight,BMI,Waist,Hip,WHRatio,Grade
        format!(
            "{id},45,M,7000,14,250000,1.2,95,28,30,0.8,0.2,140,185,110,48,4.4,170,80,27.7,95,103,0.92,{grade}"
        )
    }

    #[test]
    fn parses_one_complete_row() {
        let csv = format!("{}\n{}\n", full_header(), full_row("s1", "2"));
        let (records, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert!(report.rejected.is_empty());
        assert_eq!(records[0].id, "s1");
        assert_eq!(records[0].label, Some(SteatosisGrade::new(2).unwrap()));
        assert_eq!(records[0].values.get(Feature::Sex), Some(1.0));
        assert_eq!(availability_tier(&records[0]), Some(Tier::Three));
    }

    #[test]
    fn grade_out_of_range_rejected() {
        let csv = format!("{}\n{}\n", full_header(), full_row("s1", "5"));
        let (records, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].reason, "label out of range");
        assert_eq!(report.total(), 1);
    }

    #[test]
    fn empty_cell_is_missing_not_invalid() {
        let row = full_row("s1", "1").replace(",95,103,", ",,103,"); // drop Waist
        let csv = format!("{}\n{row}\n", full_header());
        let (records, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert!(report.rejected.is_empty());
        assert!(!records[0].values.contains(Feature::Waist));
        assert_eq!(availability_tier(&records[0]), Some(Tier::Two));
    }

    #[test]
    fn non_numeric_cell_rejected_with_reason() {
        let row = full_row("s1", "1").replace("185", "high");
        let csv = format!("{}\n{row}\n", full_header());
        let (_, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert_eq!(report.rejected.len(), 1);
        assert!(report.rejected[0].reason.contains("Chol"));
    }

    #[test]
    fn unknown_header_column_rejects_rows() {
        let csv = "id,Age,Bogus,Grade\ns1,40,9,1\ns2,41,9,2\n";
        let (records, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.rejected.len(), 2);
        assert!(report.rejected[0].reason.contains("Bogus"));
    }

    #[test]
    fn missing_header_is_fatal() {
        assert!(parse_cohort("".as_bytes()).is_err());
        assert!(parse_cohort("Age,Sex\n40,M\n".as_bytes()).is_err());
    }

    #[test]
    fn unlabeled_rows_parse_for_prediction() {
        let csv = format!("{}\n{}\n", full_header(), full_row("s1", ""));
        let (records, report) = parse_cohort(csv.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert!(report.rejected.is_empty());
        assert_eq!(records[0].label, None);
    }

    #[test]
    fn order_preserved() {
        let csv = format!(
            "{}\n{}\n{}\n{}\n",
            full_header(),
            full_row("a", "0"),
            full_row("b", "1"),
            full_row("c", "2")
        );
        let (records, _) = parse_cohort(csv.as_bytes()).unwrap();
        let ids: Vec<_> = records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    fn record_with_tiers(id: &str, grade: u8, tier: Tier) -> SubjectRecord {
        let mut r = SubjectRecord::new(id);
        for &f in feature_set(tier).features {
            r.values.set(f, f.index() as f64 + 0.5);
        }
        r.label = Some(SteatosisGrade::new(grade).unwrap());
        r
    }

    #[test]
    fn partition_assigns_maximal_tier() {
        let records = vec![
            record_with_tiers("a", 0, Tier::One),
            record_with_tiers("b", 1, Tier::Two),
            record_with_tiers("c", 2, Tier::Three),
            record_with_tiers("d", 3, Tier::Three),
        ];
        let (d1, d2, d3, report) = partition_tiers(&records).unwrap();
        assert_eq!((d1.len(), d2.len(), d3.len()), (1, 1, 2));
        assert_eq!(report.tier_counts, [1, 1, 2]);
        assert_eq!(report.grade_counts[2], [0, 0, 1, 1]);
        assert_eq!(d1.matrix.dim(), (1, 12));
        assert_eq!(d2.matrix.dim(), (1, 16));
        assert_eq!(d3.matrix.dim(), (2, 22));
    }

    #[test]
    fn partition_is_disjoint_cover() {
        let records: Vec<_> = (0..30)
            .map(|i| {
                let tier = ALL_TIERS[i % 3];
                record_with_tiers(&format!("s{i}"), (i % 4) as u8, tier)
            })
            .collect();
        let (d1, d2, d3, report) = partition_tiers(&records).unwrap();
        let mut all_ids: Vec<&String> = d1.ids.iter().chain(&d2.ids).chain(&d3.ids).collect();
        assert_eq!(all_ids.len(), 30);
        all_ids.sort_unstable();
        all_ids.dedup();
        assert_eq!(all_ids.len(), 30);
        assert_eq!(report.accepted, 30);
    }

    #[test]
    fn record_missing_only_hip_is_tier2() {
        let mut r = record_with_tiers("a", 1, Tier::Three);
        r.values.unset(Feature::Hip);
        let (d1, d2, d3, _) = partition_tiers(&[r]).unwrap();
        assert_eq!((d1.len(), d2.len(), d3.len()), (0, 1, 0));
    }

    #[test]
    fn all_complete_records_go_to_tier3() {
        let records: Vec<_> = (0..5)
            .map(|i| record_with_tiers(&format!("s{i}"), 0, Tier::Three))
            .collect();
        let (d1, d2, d3, _) = partition_tiers(&records).unwrap();
        assert_eq!((d1.len(), d2.len(), d3.len()), (0, 0, 5));
    }

    #[test]
    fn unlabeled_records_rejected_by_partition() {
        let mut r = record_with_tiers("a", 0, Tier::One);
        r.label = None;
        let (_, _, _, report) = partition_tiers(&[r]).unwrap();
        assert_eq!(report.accepted, 0);
        assert_eq!(report.rejected[0].reason, "unlabeled record");
    }

    #[test]
    fn scaler_matches_direct_formula() {
        let m = array![[2.0], [4.0], [6.0]];
        let s = fit_scaler(m.view()).unwrap();
        assert_abs_diff_eq!(s.mean[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.std[0], 1.63299, epsilon = 1e-5);
        let scaled = s.apply(m.view()).unwrap();
        assert_abs_diff_eq!(scaled[(0, 0)], -1.2247, epsilon = 1e-4);
        assert_abs_diff_eq!(scaled[(1, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled[(2, 0)], 1.2247, epsilon = 1e-4);
    }

    #[test]
    fn constant_column_flagged_degenerate_and_zeroed() {
        let m = array![[5.0], [5.0], [5.0]];
        let s = fit_scaler(m.view()).unwrap();
        assert_eq!(s.mean[0], 5.0);
        assert_eq!(s.std[0], 0.0);
        assert!(s.degenerate[0]);
        let scaled = s.apply(m.view()).unwrap();
        assert!(scaled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        let m = array![[2.0, 1.0], [4.0, 2.0], [6.0, 3.0]];
        let s = fit_scaler(m.view()).unwrap();
        let scaled = s.apply(m.view()).unwrap();
        let s2 = fit_scaler(scaled.view()).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(s2.mean[j], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s2.std[j], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn scaling_is_invertible() {
        let m = array![[2.0, -7.5], [4.0, 3.25], [6.5, 9.0], [1.0, 0.0]];
        let s = fit_scaler(m.view()).unwrap();
        let scaled = s.apply(m.view()).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let recovered = scaled[(i, j)] * s.std[j] + s.mean[j];
                assert_abs_diff_eq!(recovered, m[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn scaler_rejects_empty_and_mismatched() {
        assert!(fit_scaler(Array2::<f64>::zeros((0, 3)).view()).is_err());
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let s = fit_scaler(m.view()).unwrap();
        assert!(s.apply(Array2::<f64>::zeros((2, 3)).view()).is_err());
        assert!(s.apply_row(&[1.0]).is_err());
    }
}

//! Kernel SVM trained by sequential minimal optimization, one-vs-rest for
//! multiclass, with a softmax over decision values as the probability
//! calibration.
//!
//! The solver is the classic two-loop SMO: alternate full passes and
//! non-bound passes until a full pass changes nothing, at which point every
//! training point satisfies its KKT condition within the tolerance.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, Probabilities};
use crate::error::Result;

/// Solver tolerance; KKT violations stay below this at convergence.
pub const SMO_TOLERANCE: f64 = 1e-3;

const SMO_EPS: f64 = 1e-12;
/// Hard cap on optimization sweeps; generous, convergence is typically
/// one or two orders of magnitude faster.
const MAX_PASSES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    Poly { gamma: f64, degree: u32, coef0: f64 },
    Rbf { gamma: f64 },
    Sigmoid { gamma: f64, coef0: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => dot(a, b),
            Kernel::Poly {
                gamma,
                degree,
                coef0,
            } => (gamma * dot(a, b) + coef0).powi(*degree as i32),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Sigmoid { gamma, coef0 } => (gamma * dot(a, b) + coef0).tanh(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub(super) struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
}

impl SvmParams {
    pub fn from_spec(spec: &ClassifierSpec, feature_count: usize) -> Result<SvmParams> {
        let c = spec.float_in("C", 1.0, f64::MIN_POSITIVE, f64::MAX)?;
        let gamma = 1.0 / feature_count.max(1) as f64;
        let kernel = match spec
            .text_in("kernel", "rbf", &["linear", "poly", "rbf", "sigmoid"])?
            .as_str()
        {
            "linear" => Kernel::Linear,
            "poly" => Kernel::Poly {
                gamma,
                degree: 3,
                coef0: 0.0,
            },
            "sigmoid" => Kernel::Sigmoid { gamma, coef0: 0.0 },
            _ => Kernel::Rbf { gamma },
        };
        Ok(SvmParams { c, kernel })
    }
}

/// One binary machine: decision f(x) = sum(coef_i K(sv_i, x)) - b with
/// coef_i = alpha_i * y_i over the support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinaryMachine {
    Trained {
        sv: Array2<f64>,
        coef: Vec<f64>,
        b: f64,
    },
    /// Placeholder for a class absent from the training labels; its decision
    /// value is constantly -1.
    AbsentClass,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        match self {
            BinaryMachine::Trained { sv, coef, b } => {
                let mut sum = -b;
                for (row, c) in sv.rows().into_iter().zip(coef) {
                    sum += c * kernel.eval(row.as_slice().expect("contiguous sv"), x);
                }
                sum
            }
            BinaryMachine::AbsentClass => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub machines: Vec<BinaryMachine>,
}

pub(super) fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
) -> Result<SvmModel> {
    let params = SvmParams::from_spec(spec, x.ncols())?;
    let n = x.nrows();

    // All one-vs-rest machines share one kernel matrix.
    let gram = gram_matrix(&params.kernel, x);

    let machines: Vec<BinaryMachine> = (0..class_count)
        .into_par_iter()
        .map(|class| {
            let labels: Vec<f64> = y
                .iter()
                .map(|&t| if t == class { 1.0 } else { -1.0 })
                .collect();
            if labels.iter().all(|&l| l < 0.0) {
                return BinaryMachine::AbsentClass;
            }
            let (alpha, b) = solve_binary(&gram, &labels, params.c, SMO_TOLERANCE);
            let mut sv_rows = Vec::new();
            let mut coef = Vec::new();
            for i in 0..n {
                if alpha[i] > 0.0 {
                    sv_rows.push(i);
                    coef.push(alpha[i] * labels[i]);
                }
            }
            let mut sv = Array2::zeros((sv_rows.len(), x.ncols()));
            for (pos, &i) in sv_rows.iter().enumerate() {
                sv.row_mut(pos).assign(&x.row(i));
            }
            BinaryMachine::Trained { sv, coef, b }
        })
        .collect();

    Ok(SvmModel {
        kernel: params.kernel,
        c: params.c,
        machines,
    })
}

/// Precomputed Gram matrix, row-major n x n.
pub fn gram_matrix(kernel: &Kernel, x: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = x.nrows();
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| x.row(i).to_slice().expect("row-major contiguous matrix"))
        .collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(rows[i], rows[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    gram
}

/// Decision values f(x_i) for every training point from the dual variables.
fn decisions(gram: &[f64], y: &[f64], alpha: &[f64], b: f64) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let mut sum = -b;
            for j in 0..n {
                if alpha[j] > 0.0 {
                    sum += alpha[j] * y[j] * gram[j * n + i];
                }
            }
            sum
        })
        .collect()
}

/// Largest KKT violation over the training set for a binary dual solution.
///
/// For alpha = 0 the condition is y f >= 1, for alpha = C it is y f <= 1,
/// and strictly inside the box y f = 1; the returned value is how far the
/// worst point strays from its condition.
pub fn max_kkt_violation(gram: &[f64], y: &[f64], alpha: &[f64], b: f64, c: f64) -> f64 {
    let f = decisions(gram, y, alpha, b);
    let mut worst: f64 = 0.0;
    for i in 0..y.len() {
        let yf = y[i] * f[i];
        let violation = if alpha[i] <= 0.0 {
            (1.0 - yf).max(0.0)
        } else if alpha[i] >= c {
            (yf - 1.0).max(0.0)
        } else {
            (yf - 1.0).abs()
        };
        worst = worst.max(violation);
    }
    worst
}

/// Platt's SMO on a precomputed Gram matrix. Returns (alpha, b).
pub fn solve_binary(gram: &[f64], y: &[f64], c: f64, tol: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut b = 0.0;
    // Error cache: e[i] = f(x_i) - y_i.
    let mut e: Vec<f64> = y.iter().map(|&t| -t).collect();

    let decision = |alpha: &[f64], b: f64, i: usize| -> f64 {
        let mut sum = -b;
        for j in 0..n {
            if alpha[j] > 0.0 {
                sum += alpha[j] * y[j] * gram[j * n + i];
            }
        }
        sum
    };

    let take_step = |alpha: &mut Vec<f64>,
                         b: &mut f64,
                         e: &mut Vec<f64>,
                         i1: usize,
                         i2: usize|
     -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1_old, a2_old) = (alpha[i1], alpha[i2]);
        let (y1, y2) = (y[i1], y[i2]);
        let (e1, e2) = (e[i1], e[i2]);
        let s = y1 * y2;
        let (lo, hi) = if s < 0.0 {
            ((a2_old - a1_old).max(0.0), (c + a2_old - a1_old).min(c))
        } else {
            ((a2_old + a1_old - c).max(0.0), (a2_old + a1_old).min(c))
        };
        if lo >= hi {
            return false;
        }
        let k11 = gram[i1 * n + i1];
        let k12 = gram[i1 * n + i2];
        let k22 = gram[i2 * n + i2];
        let eta = k11 + k22 - 2.0 * k12;
        let mut a2 = if eta > 0.0 {
            (a2_old + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Objective is flat or concave along the constraint: compare the
            // endpoint objectives.
            let f1 = y1 * (e1 + *b) - a1_old * k11 - s * a2_old * k12;
            let f2 = y2 * (e2 + *b) - s * a1_old * k12 - a2_old * k22;
            let l1 = a1_old + s * (a2_old - lo);
            let h1 = a1_old + s * (a2_old - hi);
            let obj_lo = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22
                + s * lo * l1 * k12;
            let obj_hi = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22
                + s * hi * h1 * k12;
            if obj_lo < obj_hi - SMO_EPS {
                lo
            } else if obj_lo > obj_hi + SMO_EPS {
                hi
            } else {
                return false;
            }
        };
        // Snap to the box so support vectors are exact.
        if a2 < 1e-8 {
            a2 = 0.0;
        } else if a2 > c - 1e-8 {
            a2 = c;
        }
        if (a2 - a2_old).abs() < SMO_EPS * (a2 + a2_old + SMO_EPS) {
            return false;
        }
        let a1 = a1_old + s * (a2_old - a2);
        let a1 = if a1 < 1e-8 {
            0.0
        } else if a1 > c - 1e-8 {
            c
        } else {
            a1
        };

        let b1 = e1 + y1 * (a1 - a1_old) * k11 + y2 * (a2 - a2_old) * k12 + *b;
        let b2 = e2 + y1 * (a1 - a1_old) * k12 + y2 * (a2 - a2_old) * k22 + *b;
        let new_b = if a1 > 0.0 && a1 < c {
            b1
        } else if a2 > 0.0 && a2 < c {
            b2
        } else {
            (b1 + b2) / 2.0
        };

        for k in 0..n {
            e[k] += y1 * (a1 - a1_old) * gram[i1 * n + k] + y2 * (a2 - a2_old) * gram[i2 * n + k]
                + *b
                - new_b;
        }
        alpha[i1] = a1;
        alpha[i2] = a2;
        *b = new_b;
        true
    };

    let examine = |alpha: &mut Vec<f64>, b: &mut f64, e: &mut Vec<f64>, i2: usize| -> bool {
        let y2 = y[i2];
        let a2 = alpha[i2];
        let r2 = e[i2] * y2;
        if (r2 < -tol && a2 < c) || (r2 > tol && a2 > 0.0) {
            // Second-choice heuristic: maximize |e1 - e2| over non-bound
            // points, then sweep non-bound, then sweep all.
            let e2 = e[i2];
            let mut best: Option<(f64, usize)> = None;
            for i in 0..n {
                if alpha[i] > 0.0 && alpha[i] < c {
                    let gap = (e[i] - e2).abs();
                    if best.is_none_or(|(g, _)| gap > g) {
                        best = Some((gap, i));
                    }
                }
            }
            if let Some((_, i1)) = best {
                if take_step(alpha, b, e, i1, i2) {
                    return true;
                }
            }
            for i1 in 0..n {
                if alpha[i1] > 0.0 && alpha[i1] < c && take_step(alpha, b, e, i1, i2) {
                    return true;
                }
            }
            for i1 in 0..n {
                if take_step(alpha, b, e, i1, i2) {
                    return true;
                }
            }
        }
        false
    };

    let mut examine_all = true;
    for _pass in 0..MAX_PASSES {
        // Refresh the error cache from scratch each sweep so convergence is
        // judged on exact values, not accumulated drift.
        for i in 0..n {
            e[i] = decision(&alpha, b, i) - y[i];
        }
        let mut changed = 0usize;
        if examine_all {
            for i2 in 0..n {
                changed += usize::from(examine(&mut alpha, &mut b, &mut e, i2));
            }
        } else {
            for i2 in 0..n {
                if alpha[i2] > 0.0 && alpha[i2] < c {
                    changed += usize::from(examine(&mut alpha, &mut b, &mut e, i2));
                }
            }
        }
        if examine_all {
            if changed == 0 {
                break; // clean full pass: KKT satisfied everywhere
            }
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
    }
    (alpha, b)
}

impl SvmModel {
    pub fn predict_proba(&self, x: &[f64]) -> Result<Probabilities> {
        let decisions: Vec<f64> = self
            .machines
            .iter()
            .map(|m| m.decision(&self.kernel, x))
            .collect();
        let max = decisions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = decisions.iter().map(|d| (d - max).exp()).collect();
        Probabilities::from_raw(exps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::{fit_classifier, ClassifierFamily};
    use ndarray::Array2;
    use rand::Rng;

    fn two_moons_like(seed: u64, n_per: usize) -> (Array2<f64>, Vec<usize>) {
        let mut stream = crate::rng::substream(seed, "svm-test-data", 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            for _ in 0..n_per {
                let base = if class == 0 { -1.0 } else { 1.0 };
                rows.push([
                    base + 0.6 * (stream.random::<f64>() - 0.5),
                    base * 0.5 + 0.6 * (stream.random::<f64>() - 0.5),
                ]);
                labels.push(class);
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        (
            Array2::from_shape_vec((labels.len(), 2), flat).unwrap(),
            labels,
        )
    }

    #[test]
    fn rbf_c_point_one_fits() {
        let (x, y) = two_moons_like(1, 20);
        let spec = ClassifierSpec::new(ClassifierFamily::Svm)
            .with_float("C", 0.1)
            .with_text("kernel", "rbf");
        let model = fit_classifier(&spec, x.view(), &y, 2, 0).unwrap();
        let correct = x
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(r, &t)| model.predict_label(r.as_slice().unwrap()).unwrap() == t)
            .count();
        assert!(correct as f64 / y.len() as f64 >= 0.9);
    }

    #[test]
    fn kkt_violations_below_tolerance_at_convergence() {
        for (kname, kernel) in [
            ("linear", Kernel::Linear),
            ("rbf", Kernel::Rbf { gamma: 0.5 }),
            (
                "poly",
                Kernel::Poly {
                    gamma: 0.5,
                    degree: 3,
                    coef0: 0.0,
                },
            ),
            ("sigmoid", Kernel::Sigmoid { gamma: 0.5, coef0: 0.0 }),
        ] {
            let (x, y) = two_moons_like(2, 15);
            let labels: Vec<f64> = y.iter().map(|&t| if t == 1 { 1.0 } else { -1.0 }).collect();
            let gram = gram_matrix(&kernel, x.view());
            let (alpha, b) = solve_binary(&gram, &labels, 1.0, SMO_TOLERANCE);
            let violation = max_kkt_violation(&gram, &labels, &alpha, b, 1.0);
            assert!(
                violation <= SMO_TOLERANCE,
                "kernel {kname}: violation {violation}"
            );
        }
    }

    #[test]
    fn multiclass_one_vs_rest_covers_four_grades() {
        let mut stream = crate::rng::substream(3, "svm-test-4c", 0);
        let centers = [(0.0, 0.0), (4.0, 0.0), (0.0, 4.0), (4.0, 4.0)];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..12 {
                rows.push([cx + stream.random::<f64>() - 0.5, cy + stream.random::<f64>() - 0.5]);
                labels.push(c);
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((48, 2), flat).unwrap();
        let spec = ClassifierSpec::new(ClassifierFamily::Svm).with_float("C", 10.0);
        let model = fit_classifier(&spec, x.view(), &labels, 4, 0).unwrap();
        let correct = x
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(r, &t)| model.predict_label(r.as_slice().unwrap()).unwrap() == t)
            .count();
        assert!(correct >= 46);
        // probabilities stay a valid distribution
        let p = model.predict_proba(&[2.0, 2.0]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn absent_class_machine_scores_lowest() {
        let (x, y) = two_moons_like(4, 10);
        // class_count 4 while only classes 0 and 1 appear
        let spec = ClassifierSpec::new(ClassifierFamily::Svm).with_float("C", 1.0);
        let model = fit_classifier(&spec, x.view(), &y, 4, 0).unwrap();
        let p = model.predict_proba(&[1.0, 0.5]).unwrap();
        assert!(p.as_slice()[2] < p.as_slice()[1].max(p.as_slice()[0]));
        assert_eq!(model.predict_label(&[1.0, 0.5]).unwrap(), 1);
    }

    #[test]
    fn svm_fit_is_deterministic() {
        let (x, y) = two_moons_like(5, 12);
        let spec = ClassifierSpec::new(ClassifierFamily::Svm).with_float("C", 0.5);
        let a = fit_classifier(&spec, x.view(), &y, 2, 0).unwrap();
        let b = fit_classifier(&spec, x.view(), &y, 2, 0).unwrap();
        assert_eq!(a, b);
    }
}

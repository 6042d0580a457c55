//! Dense feed-forward network with a softmax head, trained by minibatch
//! momentum SGD or adaptive moment estimation, with an L2 penalty and early
//! stopping.
//!
//! Training caps at 500 epochs and stops early when the monitored loss
//! (a held-out validation split when the set is large enough, otherwise the
//! training loss) fails to improve for 20 epochs; the best-seen parameters
//! are restored. Learning-rate schedules apply to the SGD solver only.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, Probabilities};
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_EPOCHS: usize = 500;
pub const PATIENCE: usize = 20;
const IMPROVEMENT_TOL: f64 = 1e-5;
const VALIDATION_FRACTION: f64 = 0.1;
/// Below this many rows the monitor falls back to training loss.
const MIN_ROWS_FOR_VALIDATION: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Logistic,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    InvScaling,
    Adaptive,
}

#[derive(Debug, Clone)]
pub(super) struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub solver: Solver,
    pub alpha: f64,
    pub schedule: Schedule,
    pub lr_init: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl MlpParams {
    pub fn from_spec(spec: &ClassifierSpec) -> Result<MlpParams> {
        let hidden_text = match spec.hyperparameters.get("hidden_layer_sizes") {
            None => "100".to_string(),
            Some(v) => v
                .as_text()
                .ok_or_else(|| Error::InvalidHyperparameter {
                    family: "MLP".into(),
                    key: "hidden_layer_sizes".into(),
                    reason: "expected a comma-separated string like \"100,50\"".into(),
                })?
                .to_string(),
        };
        let hidden: Vec<usize> = hidden_text
            .split(',')
            .map(|tok| {
                tok.trim().parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| {
                    Error::InvalidHyperparameter {
                        family: "MLP".into(),
                        key: "hidden_layer_sizes".into(),
                        reason: format!("bad layer size \"{tok}\""),
                    }
                })
            })
            .collect::<Result<_>>()?;

        let activation = match spec
            .text_in("activation", "relu", &["tanh", "relu", "logistic"])?
            .as_str()
        {
            "tanh" => Activation::Tanh,
            "logistic" => Activation::Logistic,
            _ => Activation::Relu,
        };
        let solver = match spec.text_in("solver", "adam", &["sgd", "adam"])?.as_str() {
            "sgd" => Solver::Sgd,
            _ => Solver::Adam,
        };
        let schedule = match spec
            .text_in(
                "learning_rate",
                "constant",
                &["constant", "invscaling", "adaptive"],
            )?
            .as_str()
        {
            "invscaling" => Schedule::InvScaling,
            "adaptive" => Schedule::Adaptive,
            _ => Schedule::Constant,
        };
        Ok(MlpParams {
            hidden,
            activation,
            solver,
            alpha: spec.float_in("alpha", 1e-4, 0.0, f64::MAX)?,
            schedule,
            lr_init: spec.float_in("learning_rate_init", 1e-3, f64::MIN_POSITIVE, 1.0)?,
            batch_size: spec.int_in("batch_size", 32, 1, i64::MAX)? as usize,
            momentum: spec.float_in("momentum", 0.9, 0.0, 0.9999)?,
        })
    }
}

/// Weights and biases of a feed-forward softmax network.
///
/// Exposed so gradients can be checked against finite differences from the
/// outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl Network {
    /// Glorot-uniform initialization; the logistic activation uses the
    /// narrower bound.
    pub fn init(layer_sizes: &[usize], activation: Activation, stream: &mut ChaCha8Rng) -> Network {
        let factor = match activation {
            Activation::Logistic => 2.0,
            _ => 6.0,
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (factor / (fan_in + fan_out) as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
                stream.random_range(-bound..=bound)
            });
            let bias = Array1::from_shape_fn(fan_out, |_| stream.random_range(-bound..=bound));
            weights.push(weight);
            biases.push(bias);
        }
        Network {
            weights,
            biases,
            activation,
        }
    }

    fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass keeping every post-activation, for backprop.
    fn forward_full(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut activations = vec![x.to_owned()];
        for l in 0..self.layer_count() {
            let z = activations[l].dot(&self.weights[l]) + &self.biases[l];
            let a = if l + 1 == self.layer_count() {
                softmax(z)
            } else {
                z.mapv(|v| self.activation.apply(v))
            };
            activations.push(a);
        }
        activations
    }

    /// Class probabilities for a batch.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_full(x).pop().expect("at least one layer")
    }

    /// Mean cross-entropy plus 0.5 * alpha * ||W||^2 / batch.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[usize], alpha: f64) -> f64 {
        let probs = self.forward(x);
        let n = y.len() as f64;
        let eps = 1e-15;
        let ce: f64 = y
            .iter()
            .enumerate()
            .map(|(i, &t)| -(probs[(i, t)].max(eps).ln()))
            .sum::<f64>()
            / n;
        let l2: f64 = self
            .weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum();
        ce + 0.5 * alpha * l2 / n
    }

    /// Loss and analytic parameter gradients for a batch.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        alpha: f64,
    ) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let activations = self.forward_full(x);
        let probs = &activations[self.layer_count()];
        let n = y.len() as f64;
        let eps = 1e-15;
        let ce: f64 = y
            .iter()
            .enumerate()
            .map(|(i, &t)| -(probs[(i, t)].max(eps).ln()))
            .sum::<f64>()
            / n;
        let l2: f64 = self
            .weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum();
        let loss = ce + 0.5 * alpha * l2 / n;

        // Softmax + cross-entropy head: delta = (p - onehot) / n.
        let mut delta = probs.clone();
        for (i, &t) in y.iter().enumerate() {
            delta[(i, t)] -= 1.0;
        }
        delta.mapv_inplace(|v| v / n);

        let mut grad_w = vec![Array2::zeros((0, 0)); self.layer_count()];
        let mut grad_b = vec![Array1::zeros(0); self.layer_count()];
        for l in (0..self.layer_count()).rev() {
            grad_w[l] = activations[l].t().dot(&delta) + &(alpha / n * &self.weights[l]);
            grad_b[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l].t());
                back.zip_mut_with(&activations[l], |d, &a| {
                    *d *= self.activation.derivative_from_output(a);
                });
                delta = back;
            }
        }
        (loss, grad_w, grad_b)
    }
}

fn softmax(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub epochs_run: usize,
}

struct OptimizerState {
    velocity_w: Vec<Array2<f64>>,
    velocity_b: Vec<Array1<f64>>,
    m_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_w: Vec<Array2<f64>>,
    v_b: Vec<Array1<f64>>,
    step: u64,
}

impl OptimizerState {
    fn new(net: &Network) -> OptimizerState {
        let zw: Vec<Array2<f64>> = net.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        let zb: Vec<Array1<f64>> = net.biases.iter().map(|b| Array1::zeros(b.len())).collect();
        OptimizerState {
            velocity_w: zw.clone(),
            velocity_b: zb.clone(),
            m_w: zw.clone(),
            m_b: zb.clone(),
            v_w: zw,
            v_b: zb,
            step: 0,
        }
    }

    fn update(
        &mut self,
        net: &mut Network,
        grad_w: &[Array2<f64>],
        grad_b: &[Array1<f64>],
        solver: Solver,
        lr: f64,
        momentum: f64,
    ) {
        match solver {
            Solver::Sgd => {
                for l in 0..net.weights.len() {
                    self.velocity_w[l] = momentum * &self.velocity_w[l] - lr * &grad_w[l];
                    self.velocity_b[l] = momentum * &self.velocity_b[l] - lr * &grad_b[l];
                    net.weights[l] += &self.velocity_w[l];
                    net.biases[l] += &self.velocity_b[l];
                }
            }
            Solver::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.step += 1;
                let c1 = 1.0 - B1.powi(self.step as i32);
                let c2 = 1.0 - B2.powi(self.step as i32);
                for l in 0..net.weights.len() {
                    self.m_w[l] = B1 * &self.m_w[l] + (1.0 - B1) * &grad_w[l];
                    self.v_w[l] = B2 * &self.v_w[l] + (1.0 - B2) * &grad_w[l].mapv(|g| g * g);
                    self.m_b[l] = B1 * &self.m_b[l] + (1.0 - B1) * &grad_b[l];
                    self.v_b[l] = B2 * &self.v_b[l] + (1.0 - B2) * &grad_b[l].mapv(|g| g * g);
                    let step_w = self.m_w[l].mapv(|m| m / c1)
                        / self.v_w[l].mapv(|v| (v / c2).sqrt() + EPS);
                    let step_b = self.m_b[l].mapv(|m| m / c1)
                        / self.v_b[l].mapv(|v| (v / c2).sqrt() + EPS);
                    net.weights[l].zip_mut_with(&step_w, |w, &s| *w -= lr * s);
                    net.biases[l].zip_mut_with(&step_b, |b, &s| *b -= lr * s);
                }
            }
        }
    }
}

pub(super) fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<MlpModel> {
    let params = MlpParams::from_spec(spec)?;
    let n = x.nrows();

    // Held-out monitor split when the set is big enough.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, "mlp-split", 0));
    let val_n = if n >= MIN_ROWS_FOR_VALIDATION {
        ((n as f64 * VALIDATION_FRACTION).round() as usize).max(1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(val_n);
    let gather = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut m = Array2::zeros((idx.len(), x.ncols()));
        let mut labels = Vec::with_capacity(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            m.row_mut(pos).assign(&x.row(i));
            labels.push(y[i]);
        }
        (m, labels)
    };
    let (train_x, train_y) = gather(train_idx);
    let (val_x, val_y) = gather(val_idx);
    let n_train = train_y.len();
    let batch = params.batch_size.min(n_train);

    let mut layer_sizes = vec![x.ncols()];
    layer_sizes.extend(&params.hidden);
    layer_sizes.push(class_count);
    let mut net = Network::init(
        &layer_sizes,
        params.activation,
        &mut rng::substream(seed, "mlp-init", 0),
    );
    let mut optimizer = OptimizerState::new(&net);

    let mut lr = params.lr_init;
    let mut best_monitor = f64::INFINITY;
    let mut best_net = net.clone();
    let mut stall = 0usize;
    let mut prev_train_loss = f64::INFINITY;
    let mut adaptive_stall = 0usize;
    let mut epochs_run = 0;

    let mut batch_x = Array2::zeros((batch, x.ncols()));
    let mut batch_y = vec![0usize; batch];

    for epoch in 0..MAX_EPOCHS {
        epochs_run = epoch + 1;
        if params.solver == Solver::Sgd && params.schedule == Schedule::InvScaling {
            lr = params.lr_init / ((epoch + 1) as f64).sqrt();
        }

        let mut idx: Vec<usize> = (0..n_train).collect();
        idx.shuffle(&mut rng::substream(seed, "mlp-epoch", epoch as u64));

        let mut epoch_loss = 0.0;
        for chunk in idx.chunks(batch) {
            let bx = if chunk.len() == batch {
                for (pos, &i) in chunk.iter().enumerate() {
                    batch_x.row_mut(pos).assign(&train_x.row(i));
                    batch_y[pos] = train_y[i];
                }
                batch_x.view()
            } else {
                // last ragged chunk gets its own buffers
                batch_x = Array2::zeros((chunk.len(), x.ncols()));
                batch_y = vec![0; chunk.len()];
                for (pos, &i) in chunk.iter().enumerate() {
                    batch_x.row_mut(pos).assign(&train_x.row(i));
                    batch_y[pos] = train_y[i];
                }
                batch_x.view()
            };
            let (loss, grad_w, grad_b) = net.loss_and_gradients(bx, &batch_y[..chunk.len()], params.alpha);
            epoch_loss += loss * chunk.len() as f64;
            optimizer.update(&mut net, &grad_w, &grad_b, params.solver, lr, params.momentum);
            if batch_x.nrows() != batch {
                batch_x = Array2::zeros((batch, x.ncols()));
                batch_y = vec![0; batch];
            }
        }
        epoch_loss /= n_train as f64;

        // The adaptive schedule backs off when training stops improving.
        if params.solver == Solver::Sgd && params.schedule == Schedule::Adaptive {
            if epoch_loss > prev_train_loss - 1e-4 {
                adaptive_stall += 1;
                if adaptive_stall >= 2 {
                    lr = (lr / 5.0).max(1e-6);
                    adaptive_stall = 0;
                }
            } else {
                adaptive_stall = 0;
            }
        }
        prev_train_loss = epoch_loss;

        let monitor = if val_n > 0 {
            net.loss(val_x.view(), &val_y, 0.0)
        } else {
            epoch_loss
        };
        if monitor < best_monitor - IMPROVEMENT_TOL {
            best_monitor = monitor;
            best_net = net.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= PATIENCE {
                break;
            }
        }
    }

    Ok(MlpModel {
        network: best_net,
        epochs_run,
    })
}

impl MlpModel {
    pub fn predict_proba(&self, row: &[f64]) -> Result<Probabilities> {
        let x = Array2::from_shape_vec((1, row.len()), row.to_vec())
            .expect("single-row matrix shape");
        let probs = self.network.forward(x.view());
        Probabilities::from_raw(probs.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::{fit_classifier, ClassifierFamily};
    use ndarray::array;

    /// Central finite differences over every parameter.
    pub(crate) fn finite_difference_check(
        net: &Network,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        alpha: f64,
        step: f64,
    ) -> f64 {
        let (_, grad_w, grad_b) = net.loss_and_gradients(x, y, alpha);
        let mut worst_rel = 0.0f64;
        let mut probe = net.clone();
        for l in 0..net.weights.len() {
            for idx in 0..net.weights[l].len() {
                let original = net.weights[l].as_slice().unwrap()[idx];
                probe.weights[l].as_slice_mut().unwrap()[idx] = original + step;
                let up = probe.loss(x, y, alpha);
                probe.weights[l].as_slice_mut().unwrap()[idx] = original - step;
                let down = probe.loss(x, y, alpha);
                probe.weights[l].as_slice_mut().unwrap()[idx] = original;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grad_w[l].as_slice().unwrap()[idx];
                let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                worst_rel = worst_rel.max((numeric - analytic).abs() / scale);
            }
            for idx in 0..net.biases[l].len() {
                let original = net.biases[l][idx];
                probe.biases[l][idx] = original + step;
                let up = probe.loss(x, y, alpha);
                probe.biases[l][idx] = original - step;
                let down = probe.loss(x, y, alpha);
                probe.biases[l][idx] = original;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grad_b[l][idx];
                let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                worst_rel = worst_rel.max((numeric - analytic).abs() / scale);
            }
        }
        worst_rel
    }

    #[test]
    fn gradients_match_finite_differences_tanh_logistic() {
        for (i, activation) in [Activation::Tanh, Activation::Logistic].into_iter().enumerate() {
            let mut stream = rng::substream(31, "mlp-gradcheck", i as u64);
            let net = Network::init(&[3, 5, 4, 3], activation, &mut stream);
            let x = array![
                [0.3, -1.2, 0.8],
                [1.1, 0.4, -0.6],
                [-0.5, 0.9, 0.2],
                [0.0, -0.3, 1.4]
            ];
            let y = vec![0, 2, 1, 2];
            let rel = finite_difference_check(&net, x.view(), &y, 0.01, 1e-5);
            assert!(rel < 1e-4, "{activation:?}: relative error {rel}");
        }
    }

    #[test]
    fn gradients_match_for_relu_away_from_kinks() {
        let mut stream = rng::substream(32, "mlp-gradcheck-relu", 0);
        let net = Network::init(&[2, 6, 2], Activation::Relu, &mut stream);
        // Inputs scaled up so no pre-activation sits near zero.
        let x = array![[2.0, -3.0], [-2.5, 1.5], [3.0, 2.0]];
        let y = vec![0, 1, 0];
        let rel = finite_difference_check(&net, x.view(), &y, 0.0, 1e-5);
        assert!(rel < 1e-4, "relu relative error {rel}");
    }

    fn spiral_data() -> (ndarray::Array2<f64>, Vec<usize>) {
        let mut stream = rng::substream(33, "mlp-train-data", 0);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            for _ in 0..40 {
                let sign = if class == 0 { -1.0 } else { 1.0 };
                rows.push([
                    sign + 0.5 * (stream.random::<f64>() - 0.5),
                    -sign + 0.5 * (stream.random::<f64>() - 0.5),
                ]);
                labels.push(class);
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        (
            ndarray::Array2::from_shape_vec((labels.len(), 2), flat).unwrap(),
            labels,
        )
    }

    #[test]
    fn adam_learns_separable_data() {
        let (x, y) = spiral_data();
        let spec = ClassifierSpec::new(ClassifierFamily::Mlp)
            .with_text("hidden_layer_sizes", "16")
            .with_text("solver", "adam")
            .with_float("learning_rate_init", 0.01);
        let model = fit_classifier(&spec, x.view(), &y, 2, 9).unwrap();
        let correct = x
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(r, &t)| model.predict_label(r.as_slice().unwrap()).unwrap() == t)
            .count();
        assert!(correct as f64 / y.len() as f64 >= 0.95);
    }

    #[test]
    fn sgd_with_schedules_learns_separable_data() {
        for schedule in ["constant", "invscaling", "adaptive"] {
            let (x, y) = spiral_data();
            let spec = ClassifierSpec::new(ClassifierFamily::Mlp)
                .with_text("hidden_layer_sizes", "16")
                .with_text("solver", "sgd")
                .with_text("learning_rate", schedule)
                .with_float("learning_rate_init", 0.1)
                .with_float("momentum", 0.9);
            let model = fit_classifier(&spec, x.view(), &y, 2, 9).unwrap();
            let correct = x
                .rows()
                .into_iter()
                .zip(&y)
                .filter(|(r, &t)| model.predict_label(r.as_slice().unwrap()).unwrap() == t)
                .count();
            assert!(
                correct as f64 / y.len() as f64 >= 0.9,
                "schedule {schedule}"
            );
        }
    }

    #[test]
    fn early_stopping_kicks_in_before_the_cap() {
        let (x, y) = spiral_data();
        let spec = ClassifierSpec::new(ClassifierFamily::Mlp)
            .with_text("hidden_layer_sizes", "8")
            .with_float("learning_rate_init", 0.01);
        let model = fit_classifier(&spec, x.view(), &y, 2, 9).unwrap();
        let super::super::ModelState::Mlp(mlp) = &model.state else {
            panic!("expected mlp state");
        };
        assert!(mlp.epochs_run < MAX_EPOCHS);
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = spiral_data();
        let spec = ClassifierSpec::new(ClassifierFamily::Mlp)
            .with_text("hidden_layer_sizes", "8,4")
            .with_text("solver", "sgd");
        let a = fit_classifier(&spec, x.view(), &y, 2, 77).unwrap();
        let b = fit_classifier(&spec, x.view(), &y, 2, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paper_style_architectures_parse() {
        for sizes in ["50", "100,50,100", "100,100,50"] {
            let spec = ClassifierSpec::new(ClassifierFamily::Mlp)
                .with_text("hidden_layer_sizes", sizes);
            assert!(spec.validate().is_ok(), "{sizes}");
        }
        let bad = ClassifierSpec::new(ClassifierFamily::Mlp)
            .with_text("hidden_layer_sizes", "100,zero");
        assert!(bad.validate().is_err());
    }
}

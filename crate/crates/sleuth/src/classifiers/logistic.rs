//! Multinomial (softmax) logistic regression trained by gradient descent
//! with backtracking line search.
//!
//! The objective is the mean multinomial negative log-likelihood plus an
//! L2 penalty `l2/(2N) * ||W||^2` on the weights (biases unpenalized), so
//! `l2_strength = 1.0` matches the usual sum-scale C=1 regularization.
//! Weights start at zero, making training deterministic.

use serde::{Deserialize, Serialize};

use super::{validate_finite, TrainConfig, TrainError};
use crate::corpus::Label;
use crate::stylometry::{FeatureSchema, FeatureVector};

/// Lower bound on any class probability produced by a degenerate
/// constant-class model.
pub const SOFTMAX_FLOOR: f64 = 0.99;

const N_CLASSES: usize = 3;

/// Outcome of an optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStatus {
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: f64,
    pub final_gradient_norm: f64,
    pub warning: Option<String>,
}

/// Fitted multinomial logistic model (3 classes x 13 features on the
/// standardized scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Weight matrix, `weights[class][feature]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub l2_strength: f64,
    pub schema: FeatureSchema,
    pub status: TrainStatus,
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.weights[0].len()
    }

    /// Class scores for a standardized input.
    fn scores(&self, x: &[f64]) -> Result<[f64; N_CLASSES], TrainError> {
        if x.len() != self.n_features() {
            return Err(TrainError::DimensionMismatch {
                got: x.len(),
                expected: self.n_features(),
            });
        }
        let mut s = [0.0; N_CLASSES];
        for c in 0..N_CLASSES {
            s[c] = self.bias[c]
                + self.weights[c]
                    .iter()
                    .zip(x)
                    .map(|(w, xi)| w * xi)
                    .sum::<f64>();
        }
        Ok(s)
    }

    /// Softmax distribution over (Human, Uncertain, LLM) for a
    /// standardized input.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; N_CLASSES], TrainError> {
        Ok(softmax(&self.scores(x)?))
    }

    /// Argmax label with ties broken toward the lowest class code.
    pub fn predict(&self, x: &[f64]) -> Result<Label, TrainError> {
        let p = self.predict_proba(x)?;
        Ok(Label::from_index(argmax(&p)).expect("3 classes"))
    }

    /// Predicts from a raw feature vector by standardizing through the
    /// stored schema.
    pub fn predict_features(&self, fv: &FeatureVector) -> Label {
        let x = self.schema.apply(fv);
        self.predict(&x).expect("schema produces matching dims")
    }

    pub fn predict_proba_features(&self, fv: &FeatureVector) -> [f64; N_CLASSES] {
        let x = self.schema.apply(fv);
        self.predict_proba(&x).expect("schema produces matching dims")
    }
}

pub(crate) fn softmax(scores: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for c in 0..N_CLASSES {
        out[c] = (scores[c] - max).exp();
        sum += out[c];
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub(crate) fn argmax(p: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}

/// Mean penalized negative log-likelihood and its gradient.
///
/// Exposed so the analytic gradient can be checked against finite
/// differences. `sample_weights` must average to 1 for the loss scale to
/// match the unweighted case.
pub fn loss_and_gradient(
    weights: &[Vec<f64>],
    bias: &[f64],
    x: &[Vec<f64>],
    y: &[usize],
    sample_weights: &[f64],
    l2: f64,
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let n = x.len() as f64;
    let n_features = weights[0].len();
    let mut loss = 0.0;
    let mut grad_w = vec![vec![0.0; n_features]; N_CLASSES];
    let mut grad_b = vec![0.0; N_CLASSES];
    for ((xi, &yi), &wi) in x.iter().zip(y).zip(sample_weights) {
        let mut scores = [0.0; N_CLASSES];
        for c in 0..N_CLASSES {
            scores[c] = bias[c]
                + weights[c]
                    .iter()
                    .zip(xi)
                    .map(|(w, v)| w * v)
                    .sum::<f64>();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + scores
                .iter()
                .map(|s| (s - max).exp())
                .sum::<f64>()
                .ln();
        loss += wi * (lse - scores[yi]);
        for c in 0..N_CLASSES {
            let p = (scores[c] - lse).exp();
            let indicator = if c == yi { 1.0 } else { 0.0 };
            let coeff = wi * (p - indicator);
            grad_b[c] += coeff;
            for (g, v) in grad_w[c].iter_mut().zip(xi) {
                *g += coeff * v;
            }
        }
    }
    loss /= n;
    for g in grad_b.iter_mut() {
        *g /= n;
    }
    let reg = l2 / n;
    for c in 0..N_CLASSES {
        let mut sq = 0.0;
        for (g, w) in grad_w[c].iter_mut().zip(&weights[c]) {
            *g = *g / n + reg * w;
            sq += w * w;
        }
        loss += 0.5 * reg * sq;
    }
    (loss, grad_w, grad_b)
}

fn grad_inf_norm(grad_w: &[Vec<f64>], grad_b: &[f64]) -> f64 {
    grad_w
        .iter()
        .flatten()
        .chain(grad_b)
        .fold(0.0f64, |acc, g| acc.max(g.abs()))
}

fn sample_weights(y: &[usize], class_weighting: bool) -> Vec<f64> {
    if !class_weighting {
        return vec![1.0; y.len()];
    }
    let mut counts = [0usize; N_CLASSES];
    for &yi in y {
        counts[yi] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    y.iter()
        .map(|&yi| y.len() as f64 / (present * counts[yi] as f64))
        .collect()
}

/// Trains the multinomial model on standardized rows.
///
/// `x` rows must already be standardized through the schema that is stored
/// in the returned model. Single-class labels yield a constant-class model
/// with a warning instead of an error.
pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[Label],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<LogisticModel, TrainError> {
    if x.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    validate_finite(x)?;
    let n_features = x[0].len();
    let y_idx: Vec<usize> = y.iter().map(|l| l.index()).collect();

    let distinct: std::collections::HashSet<usize> = y_idx.iter().copied().collect();
    if distinct.len() == 1 {
        let class = *distinct.iter().next().unwrap();
        let mut bias = vec![0.0; N_CLASSES];
        bias[class] = 50.0; // softmax(50,0,0) ~ 1 within f64
        return Ok(LogisticModel {
            weights: vec![vec![0.0; n_features]; N_CLASSES],
            bias,
            l2_strength: config.l2_strength,
            schema: schema.clone(),
            status: TrainStatus {
                converged: true,
                iterations: 0,
                final_loss: 0.0,
                final_gradient_norm: 0.0,
                warning: Some(format!(
                    "training labels contain a single class ({}); returning a constant model",
                    Label::from_index(class).unwrap()
                )),
            },
        });
    }

    let weights_per_sample = sample_weights(&y_idx, config.class_weighting);
    let mut weights = vec![vec![0.0; n_features]; N_CLASSES];
    let mut bias = vec![0.0; N_CLASSES];
    let (mut loss, mut grad_w, mut grad_b) = loss_and_gradient(
        &weights,
        &bias,
        x,
        &y_idx,
        &weights_per_sample,
        config.l2_strength,
    );
    let mut converged = false;
    let mut iterations = 0;
    let mut step_guess: f64 = 1.0;
    for iter in 1..=config.max_iterations {
        iterations = iter;
        let gnorm = grad_inf_norm(&grad_w, &grad_b);
        if gnorm < config.gradient_tolerance {
            converged = true;
            iterations = iter - 1;
            break;
        }
        let gsq: f64 = grad_w
            .iter()
            .flatten()
            .chain(&grad_b)
            .map(|g| g * g)
            .sum();
        let step = match config.learning_rate {
            Some(lr) => lr,
            None => {
                // Armijo backtracking from twice the previous accepted step.
                let mut t = (step_guess * 2.0).min(1e3);
                loop {
                    let (w_try, b_try) = step_params(&weights, &bias, &grad_w, &grad_b, t);
                    let (l_try, _, _) = loss_and_gradient(
                        &w_try,
                        &b_try,
                        x,
                        &y_idx,
                        &weights_per_sample,
                        config.l2_strength,
                    );
                    if l_try <= loss - 1e-4 * t * gsq || t < 1e-16 {
                        break t;
                    }
                    t *= 0.5;
                }
            }
        };
        step_guess = step;
        let (w_new, b_new) = step_params(&weights, &bias, &grad_w, &grad_b, step);
        weights = w_new;
        bias = b_new;
        let (l_new, gw_new, gb_new) = loss_and_gradient(
            &weights,
            &bias,
            x,
            &y_idx,
            &weights_per_sample,
            config.l2_strength,
        );
        loss = l_new;
        grad_w = gw_new;
        grad_b = gb_new;
    }
    let final_gradient_norm = grad_inf_norm(&grad_w, &grad_b);
    if final_gradient_norm < config.gradient_tolerance {
        converged = true;
    }
    Ok(LogisticModel {
        weights,
        bias,
        l2_strength: config.l2_strength,
        schema: schema.clone(),
        status: TrainStatus {
            converged,
            iterations,
            final_loss: loss,
            final_gradient_norm,
            warning: None,
        },
    })
}

fn step_params(
    weights: &[Vec<f64>],
    bias: &[f64],
    grad_w: &[Vec<f64>],
    grad_b: &[f64],
    t: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let w = weights
        .iter()
        .zip(grad_w)
        .map(|(row, grow)| row.iter().zip(grow).map(|(w, g)| w - t * g).collect())
        .collect();
    let b = bias.iter().zip(grad_b).map(|(b, g)| b - t * g).collect();
    (w, b)
}

/// Loss history of a training run, for monotonicity checks.
pub fn loss_trace(
    x: &[Vec<f64>],
    y: &[Label],
    config: &TrainConfig,
    iterations: usize,
) -> Vec<f64> {
    let y_idx: Vec<usize> = y.iter().map(|l| l.index()).collect();
    let sw = sample_weights(&y_idx, config.class_weighting);
    let n_features = x[0].len();
    let mut weights = vec![vec![0.0; n_features]; N_CLASSES];
    let mut bias = vec![0.0; N_CLASSES];
    let mut trace = Vec::with_capacity(iterations + 1);
    let (mut loss, mut grad_w, mut grad_b) =
        loss_and_gradient(&weights, &bias, x, &y_idx, &sw, config.l2_strength);
    trace.push(loss);
    let mut step_guess: f64 = 1.0;
    for _ in 0..iterations {
        let gsq: f64 = grad_w
            .iter()
            .flatten()
            .chain(&grad_b)
            .map(|g| g * g)
            .sum();
        if gsq == 0.0 {
            break;
        }
        let mut t = (step_guess * 2.0).min(1e3);
        let step = loop {
            let (w_try, b_try) = step_params(&weights, &bias, &grad_w, &grad_b, t);
            let (l_try, _, _) =
                loss_and_gradient(&w_try, &b_try, x, &y_idx, &sw, config.l2_strength);
            if l_try <= loss - 1e-4 * t * gsq || t < 1e-16 {
                break t;
            }
            t *= 0.5;
        };
        step_guess = step;
        let (w_new, b_new) = step_params(&weights, &bias, &grad_w, &grad_b, step);
        weights = w_new;
        bias = b_new;
        let (l_new, gw, gb) =
            loss_and_gradient(&weights, &bias, x, &y_idx, &sw, config.l2_strength);
        loss = l_new;
        grad_w = gw;
        grad_b = gb;
        trace.push(loss);
    }
    trace
}

//! Learning-outcome analysis: a random-intercept mixed-effects logistic
//! regression relating suspected LLM use on an open response to
//! correctness of the paired posttest MCQ.
//!
//! The model is `logit P(correct) = beta0 + beta1 * flagged + u_i` with a
//! per-learner intercept `u_i ~ N(0, sigma_u^2)`. The marginal likelihood
//! is maximized under the Laplace approximation: inner Newton iterations
//! find each learner's conditional mode, an outer quasi-Newton (BFGS)
//! optimizes `(beta0, beta1, log sigma_u)`, and standard errors come from
//! the numerically differentiated observed information at the optimum.
//! Gauss-Hermite quadrature ([`gh_loglik`], [`gh_loglik_adaptive`]) serves
//! as an independent check on the Laplace approximation.

mod quadrature;

pub use quadrature::hermite_rule;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};

#[derive(Debug, Error)]
pub enum OutcomesError {
    #[error("need at least 2 learners, got {0}")]
    TooFewLearners(usize),
    #[error("outcomes are constant ({0}); the model is not identifiable")]
    ConstantOutcome(bool),
    #[error("missing verdicts for {count} responses with MCQ outcomes (first: {first})")]
    MissingVerdicts { count: usize, first: String },
    #[error("duplicate (learner, item) outcome pair: ({learner}, {item})")]
    DuplicatePair { learner: String, item: String },
    #[error("fit did not converge; effect summary refused")]
    NotConverged,
}

/// One joined observation: was the open response flagged as LLM-generated,
/// and was the paired MCQ answered correctly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub learner_id: String,
    pub item_id: String,
    pub flagged: bool,
    pub mcq_correct: bool,
}

/// Optimizer settings for [`fit_glmm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmConfig {
    /// Outer convergence threshold on the max-norm of the log-likelihood
    /// gradient.
    pub gradient_tolerance: f64,
    pub max_outer_iterations: usize,
}

impl Default for GlmmConfig {
    fn default() -> Self {
        GlmmConfig {
            gradient_tolerance: 1e-5,
            max_outer_iterations: 200,
        }
    }
}

/// Fitted mixed-model parameters on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub beta0: f64,
    pub beta1: f64,
    /// Random-intercept standard deviation (>= 0).
    pub sigma_u: f64,
    pub se_beta0: f64,
    pub se_beta1: f64,
    /// 2x2 covariance of (beta0, beta1) from the observed information.
    pub cov_beta: [[f64; 2]; 2],
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_learners: usize,
    pub n_records: usize,
    /// Fraction of records with `flagged = true`.
    pub flagged_fraction: f64,
    /// Data conditions worth reporting (e.g. separation); never fatal.
    pub diagnostics: Vec<String>,
}

/// Point estimate with a 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub estimate: f64,
    pub ci95: (f64, f64),
}

/// Effect of suspected LLM use on MCQ correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    /// exp(beta1): multiplicative change in the odds of a correct MCQ.
    pub odds_ratio: f64,
    pub or_ci95: (f64, f64),
    /// Two-sided Wald p-value for beta1.
    pub p_value: f64,
    /// Latent-scale variance explained by the fixed effects:
    /// `var_f / (var_f + sigma_u^2 + pi^2/3)`.
    pub r2_marginal: f64,
    /// Population-level P(correct) for unflagged records, inverse-logit of
    /// beta0 with a delta-method CI.
    pub prob_unflagged: ProbEstimate,
    /// Population-level P(correct) for flagged records.
    pub prob_flagged: ProbEstimate,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + exp(x)).
fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-learner data grouped for the likelihood.
struct LearnerGroup {
    flags: Vec<f64>,
    ys: Vec<f64>,
}

fn group_by_learner(records: &[OutcomeRecord]) -> Vec<LearnerGroup> {
    let mut groups: BTreeMap<&str, LearnerGroup> = BTreeMap::new();
    for r in records {
        let g = groups.entry(r.learner_id.as_str()).or_insert(LearnerGroup {
            flags: Vec::new(),
            ys: Vec::new(),
        });
        g.flags.push(if r.flagged { 1.0 } else { 0.0 });
        g.ys.push(if r.mcq_correct { 1.0 } else { 0.0 });
    }
    groups.into_values().collect()
}

/// Conditional log-density of one learner's outcomes given `u`, without
/// the random-effect prior.
fn data_loglik(group: &LearnerGroup, beta0: f64, beta1: f64, u: f64) -> f64 {
    group
        .flags
        .iter()
        .zip(&group.ys)
        .map(|(&x, &y)| {
            let eta = beta0 + beta1 * x + u;
            y * eta - log1pexp(eta)
        })
        .sum()
}

/// Sum of p(1-p) over one learner's observations at `u`.
fn sum_pq(group: &LearnerGroup, beta0: f64, beta1: f64, u: f64) -> f64 {
    group
        .flags
        .iter()
        .map(|&x| {
            let p = inv_logit(beta0 + beta1 * x + u);
            p * (1.0 - p)
        })
        .sum()
}

/// Finds the conditional mode of `u` for one learner by damped Newton
/// iteration on the strictly concave objective
/// `data_loglik(u) - u^2 / (2 sigma^2)`.
fn inner_mode(group: &LearnerGroup, beta0: f64, beta1: f64, sigma2: f64) -> f64 {
    let h = |u: f64| data_loglik(group, beta0, beta1, u) - u * u / (2.0 * sigma2);
    let mut u = 0.0;
    let mut h_u = h(u);
    for _ in 0..100 {
        let grad: f64 = group
            .flags
            .iter()
            .zip(&group.ys)
            .map(|(&x, &y)| y - inv_logit(beta0 + beta1 * x + u))
            .sum::<f64>()
            - u / sigma2;
        let curv = sum_pq(group, beta0, beta1, u) + 1.0 / sigma2;
        let mut step = grad / curv;
        if step.abs() < 1e-12 {
            break;
        }
        // Halve until the concave objective improves.
        let mut tries = 0;
        loop {
            let candidate = u + step;
            let h_candidate = h(candidate);
            if h_candidate >= h_u - 1e-12 || tries >= 40 {
                u = candidate;
                h_u = h_candidate;
                break;
            }
            step *= 0.5;
            tries += 1;
        }
    }
    u
}

const LOG_SIGMA_MIN: f64 = -8.0;
const LOG_SIGMA_MAX: f64 = 3.0;

/// Laplace-approximated log marginal likelihood at
/// `(beta0, beta1, log sigma_u)`.
fn laplace_loglik(groups: &[LearnerGroup], beta0: f64, beta1: f64, log_sigma: f64) -> f64 {
    let sigma = log_sigma.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp();
    let sigma2 = sigma * sigma;
    groups
        .iter()
        .map(|g| {
            let u_hat = inner_mode(g, beta0, beta1, sigma2);
            let pq = sum_pq(g, beta0, beta1, u_hat);
            data_loglik(g, beta0, beta1, u_hat)
                - u_hat * u_hat / (2.0 * sigma2)
                - 0.5 * (sigma2 * pq).ln_1p()
        })
        .sum()
}

/// Plain pooled logistic log-likelihood (no random effect).
fn pooled_loglik(records: &[OutcomeRecord], beta0: f64, beta1: f64) -> f64 {
    records
        .iter()
        .map(|r| {
            let eta = beta0 + beta1 * if r.flagged { 1.0 } else { 0.0 };
            let y = if r.mcq_correct { 1.0 } else { 0.0 };
            y * eta - log1pexp(eta)
        })
        .sum()
}

/// Pooled (no random effect) logistic fit by Newton iteration; used for
/// starting values.
pub fn pooled_logistic(records: &[OutcomeRecord]) -> (f64, f64) {
    // With one binary predictor the MLE is the pair of empirical logits;
    // Haldane smoothing keeps the start finite under separation.
    let mut n = [0.0f64; 2];
    let mut s = [0.0f64; 2];
    for r in records {
        let g = usize::from(r.flagged);
        n[g] += 1.0;
        s[g] += if r.mcq_correct { 1.0 } else { 0.0 };
    }
    let p0 = (s[0] + 0.5) / (n[0] + 1.0);
    let p1 = (s[1] + 0.5) / (n[1] + 1.0);
    let b0 = logit(p0);
    let b1 = if n[1] == 0.0 { 0.0 } else { logit(p1) - b0 };
    (b0, b1)
}

fn num_gradient<F: Fn(&[f64; 3]) -> f64>(f: &F, theta: &[f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for i in 0..3 {
        let h = 1e-5 * theta[i].abs().max(1.0);
        let mut plus = *theta;
        plus[i] += h;
        let mut minus = *theta;
        minus[i] -= h;
        g[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    g
}

fn num_hessian<F: Fn(&[f64; 3]) -> f64>(f: &F, theta: &[f64; 3]) -> [[f64; 3]; 3] {
    let mut hess = [[0.0; 3]; 3];
    let f0 = f(theta);
    let h: Vec<f64> = (0..3).map(|i| 1e-4 * theta[i].abs().max(1.0)).collect();
    for i in 0..3 {
        let mut plus = *theta;
        plus[i] += h[i];
        let mut minus = *theta;
        minus[i] -= h[i];
        hess[i][i] = (f(&plus) - 2.0 * f0 + f(&minus)) / (h[i] * h[i]);
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let mut pp = *theta;
            pp[i] += h[i];
            pp[j] += h[j];
            let mut pm = *theta;
            pm[i] += h[i];
            pm[j] -= h[j];
            let mut mp = *theta;
            mp[i] -= h[i];
            mp[j] += h[j];
            let mut mm = *theta;
            mm[i] -= h[i];
            mm[j] -= h[j];
            let v = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .powi(3);
    if det.abs() <= 1e-12 * scale.max(1e-300) {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(out)
}

fn invert2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() <= 1e-300 {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// Maximizes the Laplace-approximated marginal likelihood.
///
/// Separation (a flag level whose outcomes are all identical) is reported
/// in `diagnostics` but the fit is still returned; non-convergence is
/// flagged, never silently accepted.
pub fn fit_glmm(
    records: &[OutcomeRecord],
    config: &GlmmConfig,
) -> Result<MixedModelFit, OutcomesError> {
    let learners: BTreeSet<&str> = records.iter().map(|r| r.learner_id.as_str()).collect();
    if learners.len() < 2 {
        return Err(OutcomesError::TooFewLearners(learners.len()));
    }
    let any_correct = records.iter().any(|r| r.mcq_correct);
    let any_incorrect = records.iter().any(|r| !r.mcq_correct);
    if !any_correct || !any_incorrect {
        return Err(OutcomesError::ConstantOutcome(any_correct));
    }

    let mut diagnostics = Vec::new();
    for flag in [false, true] {
        let outcomes: Vec<bool> = records
            .iter()
            .filter(|r| r.flagged == flag)
            .map(|r| r.mcq_correct)
            .collect();
        if !outcomes.is_empty() && outcomes.windows(2).all(|w| w[0] == w[1]) && outcomes.len() > 1
        {
            diagnostics.push(format!(
                "separation: all {} outcomes for flagged={flag} are {}",
                outcomes.len(),
                outcomes[0]
            ));
        }
    }

    let groups = group_by_learner(records);
    let objective = |theta: &[f64; 3]| -laplace_loglik(&groups, theta[0], theta[1], theta[2]);

    let (b0_start, b1_start) = pooled_logistic(records);
    let mut theta = [b0_start, b1_start, (0.5f64).ln()];
    let mut f_curr = objective(&theta);
    let mut grad = num_gradient(&objective, &theta);
    let mut h_inv = [[0.0f64; 3]; 3];
    for (i, row) in h_inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..config.max_outer_iterations {
        iterations = iter;
        let gnorm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gnorm < config.gradient_tolerance {
            converged = true;
            break;
        }
        // Search direction from the inverse-Hessian estimate.
        let mut dir = [0.0f64; 3];
        for i in 0..3 {
            for j in 0..3 {
                dir[i] -= h_inv[i][j] * grad[j];
            }
        }
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // Reset to steepest descent on a non-descent direction.
            for (i, d) in dir.iter_mut().enumerate() {
                *d = -grad[i];
            }
            h_inv = [[0.0; 3]; 3];
            for (i, row) in h_inv.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }
        // Armijo backtracking.
        let mut t = 1.0f64;
        let (theta_new, f_new) = loop {
            let candidate = [
                theta[0] + t * dir[0],
                theta[1] + t * dir[1],
                (theta[2] + t * dir[2]).clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX),
            ];
            let f_c = objective(&candidate);
            if f_c <= f_curr + 1e-4 * t * slope || t < 1e-14 {
                break (candidate, f_c);
            }
            t *= 0.5;
        };
        if t < 1e-14 && f_new >= f_curr {
            // Line search stalled; accept convergence state as-is.
            break;
        }
        let grad_new = num_gradient(&objective, &theta_new);
        // BFGS update of the inverse Hessian.
        let s = [
            theta_new[0] - theta[0],
            theta_new[1] - theta[1],
            theta_new[2] - theta[2],
        ];
        let yv = [
            grad_new[0] - grad[0],
            grad_new[1] - grad[1],
            grad_new[2] - grad[2],
        ];
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            // H' = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let mut hy = [0.0f64; 3];
            for i in 0..3 {
                for j in 0..3 {
                    hy[i] += h_inv[i][j] * yv[j];
                }
            }
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let mut h_new = [[0.0f64; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    h_new[i][j] = h_inv[i][j] - rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
            h_inv = h_new;
        }
        theta = theta_new;
        f_curr = f_new;
        grad = grad_new;
    }
    if !converged {
        let gnorm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        converged = gnorm < config.gradient_tolerance;
    }

    // Observed information at the optimum (objective is -loglik).
    let hess = num_hessian(&objective, &theta);
    let (se0, se1, cov) = match invert3(&hess) {
        Some(inv) if inv[0][0] > 0.0 && inv[1][1] > 0.0 => (
            inv[0][0].sqrt(),
            inv[1][1].sqrt(),
            [[inv[0][0], inv[0][1]], [inv[1][0], inv[1][1]]],
        ),
        _ => {
            // Boundary sigma makes the 3x3 information singular; fall back
            // to the beta block with sigma held fixed.
            diagnostics.push(
                "observed information singular in sigma; beta covariance from 2x2 block"
                    .to_string(),
            );
            let block = [[hess[0][0], hess[0][1]], [hess[1][0], hess[1][1]]];
            match invert2(block) {
                Some(inv) if inv[0][0] > 0.0 && inv[1][1] > 0.0 => (
                    inv[0][0].sqrt(),
                    inv[1][1].sqrt(),
                    inv,
                ),
                _ => (f64::NAN, f64::NAN, [[f64::NAN; 2]; 2]),
            }
        }
    };

    let flagged = records.iter().filter(|r| r.flagged).count() as f64;
    Ok(MixedModelFit {
        beta0: theta[0],
        beta1: theta[1],
        sigma_u: theta[2].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp(),
        se_beta0: se0,
        se_beta1: se1,
        cov_beta: cov,
        log_likelihood: -f_curr,
        converged,
        iterations,
        n_learners: learners.len(),
        n_records: records.len(),
        flagged_fraction: flagged / records.len() as f64,
        diagnostics,
    })
}

/// Log marginal likelihood by (non-adaptive) Gauss-Hermite quadrature.
///
/// Exact for `sigma_u = 0`, where the integral collapses to the plain
/// pooled logistic likelihood. `points` must be at least 5.
pub fn gh_loglik(
    records: &[OutcomeRecord],
    beta0: f64,
    beta1: f64,
    sigma_u: f64,
    points: usize,
) -> f64 {
    assert!(points >= 5, "gh_loglik needs at least 5 points");
    if sigma_u == 0.0 {
        return pooled_loglik(records, beta0, beta1);
    }
    let (nodes, weights) = hermite_rule(points);
    let ln_weights: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let groups = group_by_learner(records);
    let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
    groups
        .iter()
        .map(|g| {
            let terms: Vec<f64> = nodes
                .iter()
                .zip(&ln_weights)
                .map(|(&x, &lw)| {
                    let u = std::f64::consts::SQRT_2 * sigma_u * x;
                    lw + data_loglik(g, beta0, beta1, u)
                })
                .collect();
            log_sum_exp(&terms) - half_ln_pi
        })
        .sum()
}

/// Adaptive Gauss-Hermite: nodes centered at each learner's conditional
/// mode and scaled by the local curvature. Requires `sigma_u > 0`.
pub fn gh_loglik_adaptive(
    records: &[OutcomeRecord],
    beta0: f64,
    beta1: f64,
    sigma_u: f64,
    points: usize,
) -> f64 {
    assert!(points >= 5, "gh_loglik_adaptive needs at least 5 points");
    assert!(sigma_u > 0.0, "adaptive quadrature needs sigma_u > 0");
    let (nodes, weights) = hermite_rule(points);
    let ln_weights: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let groups = group_by_learner(records);
    let sigma2 = sigma_u * sigma_u;
    let ln_norm = sigma_u.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
    groups
        .iter()
        .map(|g| {
            let u_hat = inner_mode(g, beta0, beta1, sigma2);
            let tau = 1.0 / (sum_pq(g, beta0, beta1, u_hat) + 1.0 / sigma2).sqrt();
            let terms: Vec<f64> = nodes
                .iter()
                .zip(&ln_weights)
                .map(|(&x, &lw)| {
                    let u = u_hat + std::f64::consts::SQRT_2 * tau * x;
                    let h_full =
                        data_loglik(g, beta0, beta1, u) - u * u / (2.0 * sigma2) - ln_norm;
                    lw + x * x + h_full
                })
                .collect();
            (std::f64::consts::SQRT_2 * tau).ln() + log_sum_exp(&terms)
        })
        .sum()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Derives the odds ratio, Wald CI and p-value, marginal R-squared, and
/// population-level predicted probabilities from a converged fit.
pub fn effect_summary(fit: &MixedModelFit) -> Result<EffectSummary, OutcomesError> {
    if !fit.converged {
        return Err(OutcomesError::NotConverged);
    }
    let or = fit.beta1.exp();
    let or_ci95 = (
        (fit.beta1 - 1.96 * fit.se_beta1).exp(),
        (fit.beta1 + 1.96 * fit.se_beta1).exp(),
    );
    let z = fit.beta1 / fit.se_beta1;
    let p_value = 2.0 * (1.0 - normal_cdf(z.abs()));

    // Fixed-effect linear predictor over the data takes two values with
    // probabilities (1-pf, pf); its population variance is
    // beta1^2 * pf * (1 - pf).
    let pf = fit.flagged_fraction;
    let var_fixed = fit.beta1 * fit.beta1 * pf * (1.0 - pf);
    let residual = std::f64::consts::PI * std::f64::consts::PI / 3.0;
    let r2_marginal = var_fixed / (var_fixed + fit.sigma_u * fit.sigma_u + residual);

    let lin_unflagged = fit.beta0;
    let se_unflagged = fit.se_beta0;
    let lin_flagged = fit.beta0 + fit.beta1;
    let se_flagged = (fit.cov_beta[0][0] + fit.cov_beta[1][1] + 2.0 * fit.cov_beta[0][1])
        .max(0.0)
        .sqrt();
    let prob = |lin: f64, se: f64| ProbEstimate {
        estimate: inv_logit(lin),
        ci95: (inv_logit(lin - 1.96 * se), inv_logit(lin + 1.96 * se)),
    };
    Ok(EffectSummary {
        odds_ratio: or,
        or_ci95,
        p_value,
        r2_marginal,
        prob_unflagged: prob(lin_unflagged, se_unflagged),
        prob_flagged: prob(lin_flagged, se_flagged),
    })
}

/// Human-readable block quoting OR, CI, p, marginal R-squared, and both
/// predicted probabilities.
pub fn render_effect_text(summary: &EffectSummary) -> String {
    let p_text = if summary.p_value < 0.001 {
        "p < .001".to_string()
    } else {
        format!("p = {:.3}", summary.p_value)
    };
    format!(
        "Odds ratio (flagged vs. not): {:.2} (95% CI [{:.2}, {:.2}], {})\n\
         Marginal R^2: {:.3}\n\
         P(correct | not flagged): {:.3} (95% CI [{:.3}, {:.3}])\n\
         P(correct | flagged):     {:.3} (95% CI [{:.3}, {:.3}])\n",
        summary.odds_ratio,
        summary.or_ci95.0,
        summary.or_ci95.1,
        p_text,
        summary.r2_marginal,
        summary.prob_unflagged.estimate,
        summary.prob_unflagged.ci95.0,
        summary.prob_unflagged.ci95.1,
        summary.prob_flagged.estimate,
        summary.prob_flagged.ci95.0,
        summary.prob_flagged.ci95.1,
    )
}

/// Result of joining detector verdicts onto corpus MCQ outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    pub records: Vec<OutcomeRecord>,
    /// Responses skipped because they carry no MCQ outcome.
    pub skipped_missing_mcq: usize,
}

/// Joins per-response verdicts with MCQ outcomes.
///
/// Only verdict 1 (LLM) counts as suspected use; responses without an MCQ
/// outcome are skipped and counted. Every response that has an MCQ outcome
/// must have a verdict, and (learner, item) pairs must be unique.
pub fn join_outcomes(
    corpus: &Corpus,
    verdicts: &BTreeMap<String, Label>,
) -> Result<JoinOutcome, OutcomesError> {
    let mut records = Vec::new();
    let mut skipped = 0usize;
    let mut missing: Vec<String> = Vec::new();
    let mut seen_pairs = BTreeSet::new();
    for r in corpus.responses() {
        let Some(mcq) = r.mcq_correct else {
            skipped += 1;
            continue;
        };
        let Some(&verdict) = verdicts.get(&r.response_id) else {
            missing.push(r.response_id.clone());
            continue;
        };
        if !seen_pairs.insert((r.learner_id.clone(), r.item_id.clone())) {
            return Err(OutcomesError::DuplicatePair {
                learner: r.learner_id.clone(),
                item: r.item_id.clone(),
            });
        }
        records.push(OutcomeRecord {
            learner_id: r.learner_id.clone(),
            item_id: r.item_id.clone(),
            flagged: verdict == Label::Llm,
            mcq_correct: mcq,
        });
    }
    if !missing.is_empty() {
        return Err(OutcomesError::MissingVerdicts {
            count: missing.len(),
            first: missing[0].clone(),
        });
    }
    Ok(JoinOutcome {
        records,
        skipped_missing_mcq: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, LabeledResponse, Provenance};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn record(learner: &str, item: &str, flagged: bool, correct: bool) -> OutcomeRecord {
        OutcomeRecord {
            learner_id: learner.to_string(),
            item_id: item.to_string(),
            flagged,
            mcq_correct: correct,
        }
    }

    /// Simulates records from the generating model.
    fn simulate(
        beta0: f64,
        beta1: f64,
        sigma_u: f64,
        learners: usize,
        items: usize,
        seed: u64,
    ) -> Vec<OutcomeRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for l in 0..learners {
            let u = sigma_u * normal.sample(&mut rng);
            for j in 0..items {
                let flagged = rng.random_bool(0.5);
                let eta = beta0 + beta1 * if flagged { 1.0 } else { 0.0 } + u;
                let correct = rng.random_bool(inv_logit(eta));
                out.push(record(&format!("s{l}"), &format!("i{j}"), flagged, correct));
            }
        }
        out
    }

    #[test]
    fn gh_sigma_zero_equals_pooled_exactly() {
        let records = simulate(0.8, 0.5, 0.0, 20, 4, 1);
        let gh = gh_loglik(&records, 0.6, 0.4, 0.0, 20);
        let pooled = pooled_loglik(&records, 0.6, 0.4);
        assert_eq!(gh, pooled);
    }

    #[test]
    fn gh_single_observation_matches_trapezoid_oracle() {
        // One learner, one observation: L = int p(y|u) phi(u; 0, s^2) du.
        let records = vec![record("s0", "i0", true, true)];
        let (beta0, beta1, sigma) = (0.3, 0.7, 0.9);
        let gh = gh_loglik(&records, beta0, beta1, sigma, 40);
        // Dense trapezoid over [-10s, 10s].
        let n = 200_000;
        let lo = -10.0 * sigma;
        let hi = 10.0 * sigma;
        let dx = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for k in 0..=n {
            let u = lo + k as f64 * dx;
            let eta = beta0 + beta1 + u;
            let p = inv_logit(eta);
            let phi = (-u * u / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            integral += w * p * phi * dx;
        }
        assert!(
            (gh - integral.ln()).abs() < 1e-6,
            "gh {gh} vs trapezoid {}",
            integral.ln()
        );
    }

    #[test]
    fn gh_point_count_stabilizes() {
        let records = simulate(1.0, 0.8, 0.8, 15, 4, 3);
        let l10 = gh_loglik(&records, 0.9, 0.7, 0.6, 10);
        let l20 = gh_loglik(&records, 0.9, 0.7, 0.6, 20);
        let l40 = gh_loglik(&records, 0.9, 0.7, 0.6, 40);
        assert!((l20 - l40).abs() <= (l10 - l20).abs() + 1e-9);
        assert!((l20 - l40).abs() < 1e-8, "l20={l20} l40={l40}");
    }

    #[test]
    fn adaptive_gh_agrees_with_plain_gh() {
        let records = simulate(0.9, 0.6, 0.8, 12, 6, 7);
        let plain = gh_loglik(&records, 0.8, 0.5, 0.9, 60);
        let adaptive = gh_loglik_adaptive(&records, 0.8, 0.5, 0.9, 20);
        assert!(
            (plain - adaptive).abs() < 1e-6,
            "plain {plain} vs adaptive {adaptive}"
        );
    }

    #[test]
    fn laplace_close_to_adaptive_gh_at_optimum() {
        let records = simulate(1.0, 0.9, 1.0, 10, 8, 11);
        let fit = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        let agh = gh_loglik_adaptive(
            &records,
            fit.beta0,
            fit.beta1,
            fit.sigma_u.max(1e-6),
            20,
        );
        assert!(
            (fit.log_likelihood - agh).abs() < 0.1,
            "laplace {} vs agh {agh}",
            fit.log_likelihood
        );
    }

    #[test]
    fn sigma_zero_data_reduces_to_pooled_fit() {
        // Seed chosen so the variance estimate lands on the boundary
        // (sigma-hat ~ 0); that is the case where the mixed model reduces
        // to pooled regression. Samples whose MLE has interior sigma-hat
        // legitimately differ from the pooled fit.
        let records = simulate(1.84, 0.86, 0.0, 250, 6, 4);
        let fit = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        // Unsmoothed empirical-logit oracle (exact pooled MLE for a
        // saturated binary design).
        let mut n = [0.0f64; 2];
        let mut s = [0.0f64; 2];
        for r in &records {
            let g = usize::from(r.flagged);
            n[g] += 1.0;
            s[g] += f64::from(u8::from(r.mcq_correct));
        }
        let b0_oracle = logit(s[0] / n[0]);
        let b1_oracle = logit(s[1] / n[1]) - b0_oracle;
        assert!(
            (fit.beta0 - b0_oracle).abs() < 1e-3,
            "beta0 {} vs {}",
            fit.beta0,
            b0_oracle
        );
        assert!(
            (fit.beta1 - b1_oracle).abs() < 1e-3,
            "beta1 {} vs {}",
            fit.beta1,
            b1_oracle
        );
        assert!(fit.sigma_u < 0.05, "sigma_u = {}", fit.sigma_u);
    }

    #[test]
    fn loglik_improves_over_start() {
        let records = simulate(1.0, 0.5, 0.8, 60, 6, 13);
        let groups = group_by_learner(&records);
        let (b0, b1) = pooled_logistic(&records);
        let start = laplace_loglik(&groups, b0, b1, (0.5f64).ln());
        let fit = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        assert!(fit.log_likelihood >= start - 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let records = simulate(1.2, 0.6, 0.9, 40, 5, 21);
        let a = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        let b = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn parameter_recovery_single_replication() {
        let records = simulate(1.84, 0.86, 1.0, 300, 6, 42);
        let fit = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.beta1 - 0.86).abs() < 3.0 * fit.se_beta1);
        assert!((fit.sigma_u - 1.0).abs() < 0.35, "sigma {}", fit.sigma_u);
    }

    #[test]
    fn too_few_learners_and_constant_outcomes_rejected() {
        let only_one = vec![record("s0", "i0", false, true), record("s0", "i1", true, false)];
        assert!(matches!(
            fit_glmm(&only_one, &GlmmConfig::default()),
            Err(OutcomesError::TooFewLearners(1))
        ));
        let constant = vec![
            record("s0", "i0", false, true),
            record("s1", "i0", true, true),
        ];
        assert!(matches!(
            fit_glmm(&constant, &GlmmConfig::default()),
            Err(OutcomesError::ConstantOutcome(true))
        ));
    }

    #[test]
    fn separation_reported_but_fit_returned() {
        let mut records = Vec::new();
        for l in 0..10 {
            records.push(record(&format!("s{l}"), "i0", true, true));
            records.push(record(&format!("s{l}"), "i1", false, l % 2 == 0));
        }
        let fit = fit_glmm(&records, &GlmmConfig::default()).unwrap();
        assert!(fit
            .diagnostics
            .iter()
            .any(|d| d.contains("separation")));
    }

    #[test]
    fn null_effect_gives_unit_odds_ratio() {
        let fit = MixedModelFit {
            beta0: 1.1,
            beta1: 0.0,
            sigma_u: 0.5,
            se_beta0: 0.1,
            se_beta1: 0.2,
            cov_beta: [[0.01, 0.0], [0.0, 0.04]],
            log_likelihood: -10.0,
            converged: true,
            iterations: 5,
            n_learners: 10,
            n_records: 40,
            flagged_fraction: 0.5,
            diagnostics: Vec::new(),
        };
        let s = effect_summary(&fit).unwrap();
        assert_eq!(s.odds_ratio, 1.0);
        assert!((s.prob_flagged.estimate - s.prob_unflagged.estimate).abs() < 1e-15);
        assert!(s.or_ci95.0 < 1.0 && s.or_ci95.1 > 1.0);
        assert!((s.p_value - 1.0).abs() < 1e-12);
        assert_eq!(s.r2_marginal, 0.0);
    }

    #[test]
    fn reported_probability_pair_is_consistent() {
        // logit(0.937) - logit(0.863) should reproduce an odds ratio near
        // 2.37, and the inverse logits of 1.84 / 2.70 the probability pair.
        let b1 = logit(0.937) - logit(0.863);
        assert!((b1.exp() - 2.37).abs() < 0.05, "OR = {}", b1.exp());
        assert!((inv_logit(1.84) - 0.863).abs() < 5e-3);
        assert!((inv_logit(1.84 + 0.86) - 0.937).abs() < 5e-3);
    }

    #[test]
    fn effect_monotonicity() {
        let mk_fit = |beta1: f64| MixedModelFit {
            beta0: 0.8,
            beta1,
            sigma_u: 0.7,
            se_beta0: 0.1,
            se_beta1: 0.15,
            cov_beta: [[0.01, 0.001], [0.001, 0.0225]],
            log_likelihood: -5.0,
            converged: true,
            iterations: 3,
            n_learners: 20,
            n_records: 80,
            flagged_fraction: 0.4,
            diagnostics: Vec::new(),
        };
        for beta1 in [-1.0, -0.2, 0.3, 1.5] {
            let s = effect_summary(&mk_fit(beta1)).unwrap();
            assert_eq!(beta1 > 0.0, s.odds_ratio > 1.0);
            assert_eq!(
                beta1 > 0.0,
                s.prob_flagged.estimate > s.prob_unflagged.estimate
            );
            assert!(s.r2_marginal >= 0.0 && s.r2_marginal < 1.0);
            assert!(s.or_ci95.0 < s.odds_ratio && s.odds_ratio < s.or_ci95.1);
        }
    }

    #[test]
    fn effect_summary_refuses_unconverged_fit() {
        let mut fit = MixedModelFit {
            beta0: 0.0,
            beta1: 0.0,
            sigma_u: 0.0,
            se_beta0: 1.0,
            se_beta1: 1.0,
            cov_beta: [[1.0, 0.0], [0.0, 1.0]],
            log_likelihood: 0.0,
            converged: false,
            iterations: 0,
            n_learners: 2,
            n_records: 2,
            flagged_fraction: 0.5,
            diagnostics: Vec::new(),
        };
        assert!(matches!(
            effect_summary(&fit),
            Err(OutcomesError::NotConverged)
        ));
        fit.converged = true;
        assert!(effect_summary(&fit).is_ok());
    }

    fn outcome_corpus() -> Corpus {
        let mk = |id: &str, learner: &str, item: &str, mcq: Option<bool>| LabeledResponse {
            response_id: id.to_string(),
            learner_id: learner.to_string(),
            lesson_id: "lesson".to_string(),
            item_id: item.to_string(),
            text: "text".to_string(),
            coder_a: None,
            coder_b: None,
            consensus: Label::Human,
            mcq_correct: mcq,
        };
        Corpus::from_responses(
            vec![
                mk("r1", "s1", "i1", Some(true)),
                mk("r2", "s1", "i2", None),
                mk("r3", "s2", "i1", Some(false)),
                mk("r4", "s2", "i2", None),
            ],
            Provenance {
                source: "<test>".to_string(),
                format: "csv".to_string(),
            },
        )
        .unwrap()
    }

    #[test]
    fn join_skips_missing_mcq_and_flags_only_llm() {
        let corpus = outcome_corpus();
        let mut verdicts = BTreeMap::new();
        verdicts.insert("r1".to_string(), Label::Llm);
        verdicts.insert("r3".to_string(), Label::Uncertain);
        let joined = join_outcomes(&corpus, &verdicts).unwrap();
        assert_eq!(joined.records.len(), 2);
        assert_eq!(joined.skipped_missing_mcq, 2);
        assert!(joined.records[0].flagged); // LLM verdict
        assert!(!joined.records[1].flagged); // Uncertain does not count
    }

    #[test]
    fn join_requires_verdicts_for_mcq_rows() {
        let corpus = outcome_corpus();
        let verdicts = BTreeMap::new();
        assert!(matches!(
            join_outcomes(&corpus, &verdicts),
            Err(OutcomesError::MissingVerdicts { count: 2, .. })
        ));
    }

    #[test]
    fn join_rejects_duplicate_pairs() {
        let mk = |id: &str| LabeledResponse {
            response_id: id.to_string(),
            learner_id: "s1".to_string(),
            lesson_id: String::new(),
            item_id: "i1".to_string(),
            text: String::new(),
            coder_a: None,
            coder_b: None,
            consensus: Label::Llm,
            mcq_correct: Some(true),
        };
        let corpus = Corpus::from_responses(
            vec![mk("r1"), mk("r2")],
            Provenance {
                source: "<test>".to_string(),
                format: "csv".to_string(),
            },
        )
        .unwrap();
        let mut verdicts = BTreeMap::new();
        verdicts.insert("r1".to_string(), Label::Llm);
        verdicts.insert("r2".to_string(), Label::Human);
        assert!(matches!(
            join_outcomes(&corpus, &verdicts),
            Err(OutcomesError::DuplicatePair { .. })
        ));
    }

    #[test]
    fn manual_join_matches() {
        let corpus = outcome_corpus();
        let mut verdicts = BTreeMap::new();
        verdicts.insert("r1".to_string(), Label::Llm);
        verdicts.insert("r3".to_string(), Label::Human);
        let joined = join_outcomes(&corpus, &verdicts).unwrap();
        let expected = vec![
            record("s1", "i1", true, true),
            record("s2", "i1", false, false),
        ];
        assert_eq!(joined.records, expected);
    }
}


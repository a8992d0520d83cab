//! Weighted soft-margin linear SVM.
//!
//! Solves
//!
//! ```text
//! min_{w,b} ½‖w‖² + C Σ_i s_i · max(0, 1 − y_i (wᵀx_i + b))
//! ```
//!
//! through its dual with sequential minimal optimization: box constraints
//! `0 ≤ α_i ≤ C s_i`, one equality `Σ y_i α_i = 0` for the unregularized bias,
//! and second-order working-set selection. Samples with zero weight have an
//! empty box and are dropped before solving.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Hyperplane;
use crate::dataset::Label;
use crate::error::{MagicError, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    /// Maximal KKT violation `m(α) − M(α)` at termination.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            tol: 1e-6,
            max_iter: 1_000_000,
        }
    }
}

/// `½‖w‖² + C Σ_i s_i · hinge_i`.
pub fn primal_objective(
    hyperplane: &Hyperplane,
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    sample_weights: &[f64],
    reg_c: f64,
) -> f64 {
    let scores = features.dot(&hyperplane.weights) + hyperplane.bias;
    let loss: f64 = scores
        .iter()
        .zip(labels)
        .zip(sample_weights)
        .filter(|(_, &s)| s > 0.0)
        .map(|((f, l), s)| s * (1.0 - l.sign() * f).max(0.0))
        .sum();
    0.5 * hyperplane.weights.dot(&hyperplane.weights) + reg_c * loss
}

/// Fits a weighted linear SVM with an unregularized bias.
pub fn fit_weighted_linear_svm(
    features: ArrayView2<'_, f64>,
    labels: &[Label],
    sample_weights: &[f64],
    reg_c: f64,
    opts: &SvmOptions,
) -> Result<Hyperplane> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(MagicError::InvalidInput("non-finite SVM feature".into()));
    }
    let gram = features.dot(&features.t());
    solve(features, gram.view(), labels, sample_weights, reg_c, opts)
}

/// SMO on a precomputed Gram matrix `features · featuresᵀ`.
pub(crate) fn solve(
    features: ArrayView2<'_, f64>,
    gram: ArrayView2<'_, f64>,
    labels: &[Label],
    sample_weights: &[f64],
    reg_c: f64,
    opts: &SvmOptions,
) -> Result<Hyperplane> {
    let n = features.nrows();
    if labels.len() != n || sample_weights.len() != n {
        return Err(MagicError::DimensionMismatch {
            expected: n,
            found: labels.len().min(sample_weights.len()),
        });
    }
    if !(reg_c > 0.0 && reg_c.is_finite()) {
        return Err(MagicError::Config(format!("reg_c must be positive, got {reg_c}")));
    }
    if sample_weights.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(MagicError::InvalidInput("sample weights must be finite and non-negative".into()));
    }
    let class_weight = |which: Label| -> f64 {
        labels
            .iter()
            .zip(sample_weights)
            .filter(|(l, _)| **l == which)
            .map(|(_, s)| s)
            .sum()
    };
    if class_weight(Label::Control) <= 0.0 || class_weight(Label::Patient) <= 0.0 {
        return Err(MagicError::InvalidInput(
            "both classes need positive total sample weight".into(),
        ));
    }

    let active: Vec<usize> = (0..n).filter(|&i| sample_weights[i] > 0.0).collect();
    let m = active.len();
    let y: Vec<f64> = active.iter().map(|&i| labels[i].sign()).collect();
    let upper: Vec<f64> = active.iter().map(|&i| reg_c * sample_weights[i]).collect();
    let k = |a: usize, b: usize| gram[[active[a], active[b]]];
    let qd: Vec<f64> = (0..m).map(|a| k(a, a)).collect();

    let mut alpha = vec![0.0; m];
    let mut grad = vec![-1.0; m];
    let is_upper = |alpha: &[f64], t: usize| alpha[t] >= upper[t];
    let is_lower = |alpha: &[f64], t: usize| alpha[t] <= 0.0;

    let mut iterations = 0;
    while iterations < opts.max_iter {
        // Working set selection (second order).
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            if y[t] > 0.0 {
                if !is_upper(&alpha, t) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !is_lower(&alpha, t) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else {
            break;
        };
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..m {
            let grad_diff = if y[t] > 0.0 {
                if is_lower(&alpha, t) {
                    continue;
                }
                gmax2 = gmax2.max(grad[t]);
                gmax + grad[t]
            } else {
                if is_upper(&alpha, t) {
                    continue;
                }
                gmax2 = gmax2.max(-grad[t]);
                gmax - grad[t]
            };
            if grad_diff > 0.0 {
                let mut quad = qd[i] + qd[t] - 2.0 * k(i, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj_diff = -(grad_diff * grad_diff) / quad;
                if obj_diff <= best {
                    best = obj_diff;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < opts.tol {
            break;
        }
        let Some(j) = j_sel else {
            break;
        };
        iterations += 1;

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = k(i, j);
        let mut quad = qd[i] + qd[j] - 2.0 * kij;
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = (alpha[i] - old_i) * y[i];
        let dj = (alpha[j] - old_j) * y[j];
        if di != 0.0 || dj != 0.0 {
            for t in 0..m {
                grad[t] += y[t] * (k(t, i) * di + k(t, j) * dj);
            }
        }
    }

    // Bias from free support vectors, else the midpoint of the feasible range.
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..m {
        let yg = y[t] * grad[t];
        if is_upper(&alpha, t) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if is_lower(&alpha, t) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let mut weights = Array1::<f64>::zeros(features.ncols());
    for (t, &row) in active.iter().enumerate() {
        if alpha[t] != 0.0 {
            weights.scaled_add(alpha[t] * y[t], &features.row(row));
        }
    }
    let hyperplane = Hyperplane { weights, bias: -rho };
    if !hyperplane.is_finite() {
        return Err(MagicError::Numerical("SVM produced non-finite hyperplane".into()));
    }
    Ok(hyperplane)
}

pub(crate) fn decision(h: &Hyperplane, x: ArrayView1<'_, f64>) -> f64 {
    h.weights.dot(&x) + h.bias
}

pub(crate) fn gram_of(features: ArrayView2<'_, f64>) -> Array2<f64> {
    features.dot(&features.t())
}

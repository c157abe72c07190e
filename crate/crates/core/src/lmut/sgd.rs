//! Stochastic gradient descent on a leaf's linear model.
//!
//! The loss is L(w) = sum_t 1/2 (Qhat_t - pred_t)^2 over the leaf buffer;
//! each per-sample update descends its gradient. The step size decays with
//! the leaf's lifetime visit count for online stability.

use crate::error::{Error, Result};

use super::tree::LeafNode;

/// Gradient of the per-sample loss 1/2 (q_hat - pred)^2 with respect to
/// the weights and bias.
pub fn sample_gradient(
    weights: &[f64],
    bias: f64,
    obs: &[f64],
    q_hat: f64,
) -> (Vec<f64>, f64) {
    let mut pred = bias;
    for (w, x) in weights.iter().zip(obs) {
        pred += w * x;
    }
    let residual = q_hat - pred;
    let grad_w = obs.iter().map(|x| -residual * x).collect();
    (grad_w, -residual)
}

/// Effective step size for a leaf that has gathered `visits` transitions.
pub fn decayed_alpha(alpha0: f64, visits: u64) -> f64 {
    alpha0 / (1.0 + visits as f64 / 100.0).sqrt()
}

/// Mean squared error of the leaf model over its buffer.
pub fn buffer_mse(leaf: &LeafNode) -> f64 {
    if leaf.buffer.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for rec in &leaf.buffer {
        let e = rec.q_hat - leaf.predict(&rec.obs);
        sum += e * e;
    }
    sum / leaf.buffer.len() as f64
}

/// Runs `epochs` in-order passes of per-sample SGD over the leaf buffer;
/// returns the training error measured after the final pass.
pub fn sgd_update(leaf: &mut LeafNode, epochs: usize, alpha0: f64) -> Result<f64> {
    if leaf.buffer.is_empty() {
        return Err(Error::usage("sgd_update on a leaf with an empty buffer"));
    }
    let alpha = decayed_alpha(alpha0, leaf.visits);
    for _ in 0..epochs {
        for idx in 0..leaf.buffer.len() {
            let (pred, q_hat) = {
                let rec = &leaf.buffer[idx];
                (leaf.predict(&rec.obs), rec.q_hat)
            };
            let step = alpha * (q_hat - pred);
            let rec = &leaf.buffer[idx];
            for (w, x) in leaf.weights.iter_mut().zip(rec.obs.values()) {
                *w += step * x;
            }
            leaf.bias += step;
        }
    }
    if !leaf.bias.is_finite() || leaf.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::DivergedFit(format!(
            "non-finite weights after SGD (alpha = {alpha}, buffer = {}, epochs = {epochs}); \
             reduce the step size",
            leaf.buffer.len()
        )));
    }
    Ok(buffer_mse(leaf))
}

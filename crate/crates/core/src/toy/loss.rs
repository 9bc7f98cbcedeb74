//! The two-term entropy-maximization objective.
//!
//! In-distribution pixels contribute the cross entropy `−ln p_y`; proxy OoD
//! pixels contribute `−(1/q) Σ_j ln p_j`, whose unique minimum is the uniform
//! distribution. The overall objective mixes their batch means with weight λ.

use crate::tensor::PROB_FLOOR;

fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_FLOOR as f64).ln()
}

/// Cross entropy of the target class.
pub fn loss_in(p: &[f64], y: usize) -> f64 {
    -ln_clamped(p[y])
}

/// Negative log-likelihood averaged over all classes.
pub fn loss_out(p: &[f64]) -> f64 {
    -p.iter().map(|&v| ln_clamped(v)).sum::<f64>() / p.len() as f64
}

/// `(1−λ)·mean(loss_in) + λ·mean(loss_out)`; an empty batch contributes 0.
pub fn overall(batch_in: &[(Vec<f64>, usize)], batch_out: &[Vec<f64>], lambda: f64) -> f64 {
    let mean_in = if batch_in.is_empty() {
        0.0
    } else {
        batch_in.iter().map(|(p, y)| loss_in(p, *y)).sum::<f64>() / batch_in.len() as f64
    };
    let mean_out = if batch_out.is_empty() {
        0.0
    } else {
        batch_out.iter().map(|p| loss_out(p)).sum::<f64>() / batch_out.len() as f64
    };
    (1.0 - lambda) * mean_in + lambda * mean_out
}

/// Gradient of `loss_in` with respect to the logits: `p − e_y`.
pub fn grad_in(p: &[f64], y: usize) -> Vec<f64> {
    let mut g = p.to_vec();
    g[y] -= 1.0;
    g
}

/// Gradient of `loss_out` with respect to the logits: `p − 1/q`.
pub fn grad_out(p: &[f64]) -> Vec<f64> {
    let u = 1.0 / p.len() as f64;
    p.iter().map(|v| v - u).collect()
}

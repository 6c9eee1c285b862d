//! Softmax and cross-entropy loss, fused for the backward pass.
//!
//! Softmax subtracts the row maximum before exponentiating. The loss
//! gradient is taken with respect to the logits of the fused
//! softmax-plus-loss map, which is `p - onehot(y)` per sample and avoids
//! the cancellation of differentiating the two stages separately.

use crate::error::{Error, Result};

/// Numerically stable softmax over a logit vector.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    debug_assert!(!z.is_empty());
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Summed negative log-likelihood over a batch of probability vectors,
/// together with the per-sample fused gradient on the logits.
pub fn cross_entropy_loss(
    probs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut d_logits = Vec::with_capacity(probs.len());
    for (row, &label) in probs.iter().zip(labels) {
        if label >= row.len() {
            return Err(Error::data(format!(
                "label {} out of range for {} classes",
                label,
                row.len()
            )));
        }
        loss -= row[label].max(f64::MIN_POSITIVE).ln();
        let mut grad = row.clone();
        grad[label] -= 1.0;
        d_logits.push(grad);
    }
    Ok((loss, d_logits))
}

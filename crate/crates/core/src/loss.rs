//! Per-tree training losses over leaf outputs.

use thiserror::Error;

use crate::labeling::KeepMask;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LossError {
    #[error("{outputs} outputs but {targets} targets")]
    LengthMismatch { outputs: usize, targets: usize },
    #[error("output {index} has {found} components, target has {expected}")]
    ShapeMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("no leaves to score")]
    Empty,
}

fn check_lengths(outputs: usize, targets: usize) -> Result<(), LossError> {
    if outputs != targets {
        return Err(LossError::LengthMismatch { outputs, targets });
    }
    if outputs == 0 {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// Mean binary cross-entropy over leaves.
pub fn bce_loss(probs: &[f64], targets: &KeepMask) -> Result<f64, LossError> {
    let y: Vec<f64> = targets.iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
    bce_loss_values(probs, &y)
}

pub(crate) fn bce_loss_values(probs: &[f64], targets: &[f64]) -> Result<f64, LossError> {
    check_lengths(probs.len(), targets.len())?;
    let sum: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to the logits behind `probs`.
/// Clamped probabilities contribute nothing.
pub(crate) fn bce_logit_grad(probs: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            if p < BCE_EPS || p > 1.0 - BCE_EPS {
                0.0
            } else {
                (p - y) / n
            }
        })
        .collect()
}

/// Mean over leaves and coordinates of the squared difference.
pub fn mse_loss(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64, LossError> {
    check_lengths(outputs.len(), targets.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (index, (o, t)) in outputs.iter().zip(targets).enumerate() {
        if o.len() != t.len() {
            return Err(LossError::ShapeMismatch {
                index,
                expected: t.len(),
                found: o.len(),
            });
        }
        sum += o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += o.len();
    }
    Ok(sum / count as f64)
}

pub(crate) fn mse_grad(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let count: usize = outputs.iter().map(Vec::len).sum();
    let k = 2.0 / count as f64;
    outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| o.iter().zip(t).map(|(a, b)| k * (a - b)).collect())
        .collect()
}

use super::activation::sigmoid_scalar;
use super::check_finite;
use crate::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn validate(n: usize, target: &[u8], mask: &[bool]) -> Result<usize> {
    if target.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "weighted_bce",
            expected: format!("{n} targets and mask entries"),
            found: format!("{} targets, {} mask entries", target.len(), mask.len()),
        });
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        c => Ok(c),
    }
}

fn term(p: f64, y: u8, w_pos: f64, w_neg: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y != 0 {
        -w_pos * p.ln()
    } else {
        -w_neg * (1.0 - p).ln()
    }
}

/// Weighted binary cross entropy averaged over unmasked samples.
///
/// Returns the loss and its gradient with respect to `pred`. The gradient is
/// evaluated at the clamped probability and passed straight through the
/// clamp; masked samples get zero gradient.
pub fn weighted_bce(
    pred: &[f64],
    target: &[u8],
    w_pos: f64,
    w_neg: f64,
    mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let count = validate(pred.len(), target, mask)? as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        loss += term(pred[i], target[i], w_pos, w_neg);
        let p = pred[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        grad[i] = if target[i] != 0 {
            -w_pos / p
        } else {
            w_neg / (1.0 - p)
        } / count;
    }
    loss /= count;
    check_finite(&grad, "weighted_bce")?;
    Ok((loss, grad))
}

/// Same loss evaluated from pre-sigmoid logits, with the gradient taken with
/// respect to the logits. Avoids the vanishing `p(1−p)` factor at saturation.
pub fn weighted_bce_logits(
    logits: &[f64],
    target: &[u8],
    w_pos: f64,
    w_neg: f64,
    mask: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let count = validate(logits.len(), target, mask)? as f64;
    let (loss, mut grad) = bce_logits_sum(logits, target, w_pos, w_neg, mask);
    grad.iter_mut().for_each(|g| *g /= count);
    Ok((loss / count, grad))
}

/// Unnormalized form of [`weighted_bce_logits`]: summed loss and gradient.
pub(crate) fn bce_logits_sum(
    logits: &[f64],
    target: &[u8],
    w_pos: f64,
    w_neg: f64,
    mask: &[bool],
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..logits.len() {
        if !mask[i] {
            continue;
        }
        let p = sigmoid_scalar(logits[i]);
        loss += term(p, target[i], w_pos, w_neg);
        grad[i] = if target[i] != 0 {
            -w_pos * (1.0 - p)
        } else {
            w_neg * p
        };
    }
    (loss, grad)
}

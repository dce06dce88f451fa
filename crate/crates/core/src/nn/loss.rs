//! Losses on network outputs, each returning the mean loss and its gradient
//! w.r.t. the outputs.

use ndarray::{Array2, ArrayView2};

use super::mlp::Mlp;
use crate::error::{Error, Result};

/// Floor applied inside every logarithm of a probability.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Row-wise softmax with max-subtraction.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn check_labels(n: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!("label {y} out of range {k}")));
    }
    Ok(())
}

/// Mean cross-entropy of softmax(logits) against integer labels.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    check_labels(n, logits.ncols(), labels)?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        let p = grad[[i, y]];
        loss -= floored_ln(p);
        if p < PROB_FLOOR {
            // the floored log is flat in the logits
            grad.row_mut(i).fill(0.0);
        } else {
            grad[[i, y]] -= 1.0;
            grad.row_mut(i).mapv_inplace(|v| v * inv_n);
        }
    }
    Ok((loss * inv_n, grad))
}

/// Mean cross-entropy of probability rows that are already normalized.
pub fn probability_cross_entropy(probs: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let n = probs.nrows();
    check_labels(n, probs.ncols(), labels)?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut grad = Array2::zeros(probs.dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = probs[[i, y]];
        loss -= floored_ln(p);
        if p >= PROB_FLOOR {
            grad[[i, y]] = -1.0 / (p * n as f64);
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean over rows of the squared error summed over columns, divided by the
/// column count (i.e. the per-coordinate MSE).
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    let diff = &pred - &target;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff * (2.0 / count)))
}

/// Mean loss and flat parameter gradient.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Reverse-mode gradient of `loss_fn(model(inputs))` w.r.t. all parameters.
pub fn grad<F>(model: &Mlp, inputs: ArrayView2<f64>, loss_fn: F) -> Result<LossGrad>
where
    F: FnOnce(ArrayView2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let tape = model.forward_tape(inputs)?;
    let (loss, d_out) = loss_fn(tape.output().view())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let (grad, _) = model.backward(&tape, d_out.view());
    Ok(LossGrad { loss, grad })
}

//! Per-sample softmax cross-entropy.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `log Σ exp(z)` with the max subtracted first.
pub fn log_sum_exp<T: Scalar>(logits: ArrayView1<'_, T>) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax<T: Scalar>(logits: ArrayView1<'_, T>) -> Array1<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out = logits.mapv(|z| (z - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// Cross-entropy of one sample: `logsumexp(z) - z[y]`.
pub fn loss<T: Scalar>(logits: ArrayView1<'_, T>, label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::Label {
            label,
            num_classes: logits.len(),
        });
    }
    Ok((log_sum_exp(logits) - logits[label]).max(T::zero()))
}

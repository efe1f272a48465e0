use super::Real;
use crate::error::{Error, Result};

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable log-softmax, evaluated in f64.
pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v.f64() - lse).collect()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Cross-entropy `-log softmax(logits)[y]` via log-sum-exp.
pub fn cross_entropy<T: Real>(logits: &[T], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::BadLabel { label: y, classes: logits.len() });
    }
    if !super::all_finite(logits) {
        return Err(Error::NonFinite("cross_entropy"));
    }
    // Clamp the rounding residue so the loss is never reported as -0.0 or -1e-17.
    Ok((-log_softmax(logits)[y]).max(0.0))
}

/// Gradient of [`cross_entropy`] with respect to the logits: `softmax - onehot(y)`.
pub fn cross_entropy_grad<T: Real>(logits: &[T], y: usize) -> Result<Vec<T>> {
    if y >= logits.len() {
        return Err(Error::BadLabel { label: y, classes: logits.len() });
    }
    let mut g: Vec<T> = softmax(logits).into_iter().map(T::of).collect();
    g[y] -= T::one();
    Ok(g)
}

//! Softmax and cross-entropy over logit vectors.

use crate::error::{ensure, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// `-log softmax(z)[target]` and its gradient `softmax(z) - onehot(target)`.
pub fn cross_entropy(z: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    ensure!(
        target < z.len(),
        "cross-entropy target {target} out of range for {} classes",
        z.len()
    );
    let loss = -log_softmax(z)[target];
    let mut grad = softmax(z);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `t` largest entries, descending, lower index first on ties.
pub fn top_indices(z: &[f64], t: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    idx.truncate(t);
    idx
}

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Log-softmax via log-sum-exp; finite for any finite logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn check_smoothing(n_out: usize, true_class: usize, epsilon: f64) -> Result<()> {
    if n_out < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two classes, got {n_out}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "label smoothing must lie in [0, 1), got {epsilon}"
        )));
    }
    if true_class >= n_out {
        return Err(Error::InvalidArgument(format!(
            "class {true_class} out of range for {n_out} outputs"
        )));
    }
    Ok(())
}

/// Target distribution: `1 - eps` on the true class, `eps / (n - 1)` elsewhere.
pub fn smoothed_targets(n_out: usize, true_class: usize, epsilon: f64) -> Result<Vec<f64>> {
    check_smoothing(n_out, true_class, epsilon)?;
    let off = epsilon / (n_out - 1) as f64;
    Ok((0..n_out)
        .map(|i| if i == true_class { 1.0 - epsilon } else { off })
        .collect())
}

/// `-sum_i p(i) log softmax(logits)_i` against the smoothed targets.
pub fn smoothed_cross_entropy(
    logits: &[f64],
    true_class: usize,
    n_out: usize,
    epsilon: f64,
) -> Result<f64> {
    if logits.len() != n_out {
        return Err(Error::DimensionMismatch {
            expected: n_out,
            actual: logits.len(),
        });
    }
    let p = smoothed_targets(n_out, true_class, epsilon)?;
    let logq = log_softmax(logits);
    // skip exact-zero targets so 0 * log q never contributes
    Ok(-p
        .iter()
        .zip(&logq)
        .filter(|(pi, _)| **pi != 0.0)
        .map(|(pi, lq)| pi * lq)
        .sum::<f64>())
}

/// Plain one-hot cross-entropy.
pub fn cross_entropy(logits: &[f64], true_class: usize) -> Result<f64> {
    if true_class >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "class {true_class} out of range for {} outputs",
            logits.len()
        )));
    }
    Ok(-log_softmax(logits)[true_class])
}

/// Batch-mean smoothed cross-entropy and its gradient with respect to the
/// logits (`(softmax - p) / batch`).
pub fn smoothed_cross_entropy_batch(
    logits: ArrayView2<f64>,
    classes: &[usize],
    epsilon: f64,
) -> Result<(f64, Array2<f64>)> {
    let (batch, n_out) = logits.dim();
    if classes.len() != batch {
        return Err(Error::DimensionMismatch {
            expected: batch,
            actual: classes.len(),
        });
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grad = Array2::zeros((batch, n_out));
    let mut total = 0.0;
    let inv = 1.0 / batch as f64;
    for (i, (row, &class)) in logits.outer_iter().zip(classes).enumerate() {
        let p = smoothed_targets(n_out, class, epsilon)?;
        let row = row.to_vec();
        let logq = log_softmax(&row);
        total -= p
            .iter()
            .zip(&logq)
            .filter(|(pi, _)| **pi != 0.0)
            .map(|(pi, lq)| pi * lq)
            .sum::<f64>();
        for (j, (lq, pj)) in logq.iter().zip(&p).enumerate() {
            grad[[i, j]] = (lq.exp() - pj) * inv;
        }
    }
    Ok((total * inv, grad))
}

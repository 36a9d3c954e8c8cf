//! Loss functions paired with their logit gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Mean negative log-likelihood of the labels under a softmax over logits.
///
/// Computed in log-sum-exp form so logits of magnitude up to ~1e3 stay
/// finite. Returns the scalar loss and `d(loss)/d(logits) =
/// (softmax - onehot) / batch`.
pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    let (n, classes) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape {
            context: "cross_entropy",
            expected: (n, 1),
            got: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut grad = Mat::zeros(n, classes);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for r in 0..n {
        let row = logits.row(r);
        let mut max = f64::NEG_INFINITY;
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for &v in row {
            sum += libm::exp(v - max);
        }
        let lse = max + libm::log(sum);
        loss += (lse - row[labels[r]]) * inv_n;
        let g = grad.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            g[c] = libm::exp(v - lse) * inv_n;
        }
        g[labels[r]] -= inv_n;
    }
    Ok((loss, grad))
}

/// Softmax probabilities per row.
pub fn softmax(logits: &Mat) -> Mat {
    let mut out = Mat::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut max = f64::NEG_INFINITY;
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        let o = out.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            let e = libm::exp(v - max);
            o[c] = e;
            sum += e;
        }
        for v in o {
            *v /= sum;
        }
    }
    out
}

/// Mean squared error over the batch, summed across output coordinates.
///
/// `loss = (1/n) Σ_rows Σ_cols (pred - target)^2`, gradient
/// `2 (pred - target) / n`.
pub fn squared_error(preds: &Mat, targets: &Mat) -> Result<(f64, Mat)> {
    if preds.shape() != targets.shape() {
        return Err(Error::Shape {
            context: "squared_error",
            expected: preds.shape(),
            got: targets.shape(),
        });
    }
    let n = preds.rows() as f64;
    let mut grad = Mat::zeros(preds.rows(), preds.cols());
    let mut loss = 0.0;
    let g = grad.as_mut_slice();
    for (i, (&p, &t)) in preds
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .enumerate()
    {
        let d = p - t;
        loss += d * d / n;
        g[i] = 2.0 * d / n;
    }
    Ok((loss, grad))
}

/// Argmax with ties broken toward the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Mat, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        if argmax(logits.row(r)) == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// Per-row probability of class 1 for two-class logits.
pub fn binary_scores(logits: &Mat) -> Result<Vec<f64>> {
    if logits.cols() != 2 {
        return Err(Error::InvalidArgument("binary scores need 2-class logits"));
    }
    let probs = softmax(logits);
    Ok((0..probs.rows()).map(|r| probs.get(r, 1)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let logits = Mat::zeros(4, 10);
        let (loss, _) = cross_entropy(&logits, &[0, 3, 7, 9]).unwrap();
        assert!((loss - libm::log(10.0)).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class_loss_is_tiny() {
        let mut logits = Mat::zeros(1, 10);
        logits.set(0, 4, 1e6);
        let (loss, _) = cross_entropy(&logits, &[4]).unwrap();
        assert!(loss.abs() < 1e-9);
        assert!(loss.is_finite());
    }

    #[test]
    fn two_class_scalar_arithmetic() {
        // logits [1, 0], label 0: loss = ln(1 + e^{-1})
        let logits = Mat::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        let expected = libm::log(1.0 + libm::exp(-1.0));
        assert!((loss - expected).abs() < 1e-12);
        // gradient rows sum to zero
        assert!((grad.get(0, 0) + grad.get(0, 1)).abs() < 1e-15);
    }

    #[test]
    fn loss_stays_finite_at_large_magnitudes() {
        let logits = Mat::from_vec(1, 3, vec![1e3, -1e3, 0.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.is_finite());
        assert!(grad.is_finite());
    }

    #[test]
    fn label_out_of_range_is_a_data_error() {
        let logits = Mat::zeros(1, 3);
        assert!(matches!(
            cross_entropy(&logits, &[3]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}

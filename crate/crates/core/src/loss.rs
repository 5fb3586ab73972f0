//! Softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{FpTensor, Real};

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// Log-sum-exp is evaluated in f64 with the row maximum subtracted.
pub fn softmax_cross_entropy<T: Real>(logits: &FpTensor<T>, labels: &[usize]) -> Result<(f64, FpTensor<T>)> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::dimension(
            "softmax_cross_entropy",
            format!("{} labels for {b} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::dimension(
            "softmax_cross_entropy",
            format!("label {bad} with {c} classes"),
        ));
    }
    let mut grad = Vec::with_capacity(b * c);
    let mut total = 0.0f64;
    for (i, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).iter().map(|v| v.as_f64()).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy((p - target) / b as f64));
        }
    }
    let loss = total / b as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("softmax_cross_entropy", "non-finite loss"));
    }
    Ok((loss, FpTensor::new(vec![b, c], grad)?))
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<T: Real>(logits: &FpTensor<T>) -> Result<Vec<usize>> {
    let (b, _) = logits.dims2()?;
    Ok((0..b)
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = FpTensor::<f64>::zeros(&[3, 10]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad.row(1)[4] - (0.1 - 1.0) / 3.0).abs() < 1e-12);
        assert!((grad.row(1)[0] - 0.1 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = FpTensor::<f32>::new(vec![1, 3], vec![1000.0, -1000.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = FpTensor::<f64>::from_fn(&[2, 4], |i| (i as f64 * 0.7).sin());
        let (_, grad) = softmax_cross_entropy(&logits, &[1, 3]).unwrap();
        for i in 0..2 {
            assert!(grad.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn bad_label_rejected() {
        let logits = FpTensor::<f64>::zeros(&[1, 3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
    }
}

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Gradient of the mean loss with respect to the logits.
    pub grad: Tensor,
}

/// Mean softmax cross-entropy of `(batch, classes)` logits against class
/// indices, using a max-shifted log-sum-exp.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<CrossEntropy> {
    if logits.ndim() != 2 || logits.dim(0) != labels.len() {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("logits {:?} with {} labels", logits.shape(), labels.len()),
        ));
    }
    let (n, c) = (logits.dim(0), logits.dim(1));
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let mut grad = vec![0.0; n * c];
    let mut total = 0.0;
    for ((row, g), &label) in logits.data().chunks(c).zip(grad.chunks_mut(c)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            denom += *gi;
        }
        total += denom.ln() + max - row[label];
        for gi in g.iter_mut() {
            *gi /= denom * n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok(CrossEntropy {
        loss: total / n as f64,
        grad: Tensor::new(vec![n, c], grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::filled(&[3, 10], 0.7);
        let ce = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((ce.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_class() {
        let mut logits = Tensor::zeros(&[1, 5]);
        logits.data_mut()[2] = 50.0;
        let ce = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(ce.loss < 1e-8);
        assert!(ce.grad.all_finite());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = Tensor::new(vec![1, 3], vec![1e4, -1e4, 0.0]).unwrap();
        let ce = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(ce.loss.is_finite() && ce.grad.all_finite());
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}

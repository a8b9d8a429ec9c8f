use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy: returns `-log softmax(logits)[true_class]` and its
/// gradient `softmax(logits) - onehot(true_class)`.
pub fn softmax_xent(logits: &Tensor, true_class: usize) -> Result<(f32, Tensor)> {
    let z = logits.data();
    if true_class >= z.len() {
        return Err(Error::Usage(format!(
            "class index {true_class} out of range for {} logits",
            z.len()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let sum: f32 = z.iter().map(|&v| (v - max).exp()).sum();
    let log_sum = sum.ln();
    let loss = -(z[true_class] - max - log_sum);
    let mut grad = softmax(z);
    grad[true_class] -= 1.0;
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

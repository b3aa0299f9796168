use super::ops::softmax_rows;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Class-weighted cross-entropy averaged over the batch:
/// `(1/B) Σ_i w[y_i] · −log softmax(logits_i)[y_i]`.
///
/// Returns the loss and its gradient with respect to the logits.
pub fn weighted_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    let (b, k) = logits.dims2("weighted_cross_entropy")?;
    if labels.len() != b {
        return Err(Error::Shape {
            op: "weighted_cross_entropy",
            detail: format!("{} labels for {b} rows", labels.len()),
        });
    }
    if weights.len() != k {
        return Err(Error::Shape {
            op: "weighted_cross_entropy",
            detail: format!("{} class weights for {k} classes", weights.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Shape {
            op: "weighted_cross_entropy",
            detail: format!("label {bad} out of range for {k} classes"),
        });
    }
    let probs = softmax_rows(logits);
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = weights[y];
        loss += w * (lse - row[y]);
        let g = grad.row_mut(i);
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v *= w * inv_b;
        }
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("weighted_cross_entropy loss".into()));
    }
    Ok((loss, grad))
}

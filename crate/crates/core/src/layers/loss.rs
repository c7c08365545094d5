use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error and its gradient `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    let n = pred.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

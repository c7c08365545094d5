use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat input index of each pooled element's maximum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

/// 2x2 max pooling with stride 2 over `[N,C,H,W]` (or `[C,H,W]`).
/// Ties go to the first element in row-major window order.
pub fn maxpool2x2(t: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let [n, c, h, w] = t.as_batch4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddPoolInput {
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = t.data();
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0; out.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let first = base + 2 * y * w + 2 * x;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = (plane * oh + y) * ow + x;
                out[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    let mut shape = t.shape().to_vec();
    let rank = shape.len();
    shape[rank - 2] = oh;
    shape[rank - 1] = ow;
    Ok((
        Tensor::from_vec(&shape, out)?,
        PoolIndices {
            argmax,
            input_shape: t.shape().to_vec(),
        },
    ))
}

/// Routes each pooled gradient back to its argmax position.
pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::LengthMismatch(indices.argmax.len(), grad_out.len()));
    }
    let mut gin = Tensor::zeros(&indices.input_shape);
    let dst = gin.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        dst[i] += g;
    }
    Ok(gin)
}

use alloc::vec;

use super::LayerParams;
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Fully connected layer, `y = x W^T + b` on `[N, in]` inputs. Weights are `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub params: LayerParams,
}

impl Dense {
    pub fn new(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            params: LayerParams::new(
                name,
                Tensor::zeros(&[outputs, inputs]),
                Tensor::zeros(&[outputs]),
            ),
        }
    }

    pub fn inputs(&self) -> usize {
        self.params.weights.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.params.weights.value.shape()[0]
    }

    fn batch(&self, x: &Tensor) -> Result<usize> {
        match *x.shape() {
            [n, i] if i == self.inputs() => Ok(n),
            _ => Err(Error::ShapeMismatch {
                expected: vec![x.shape()[0], self.inputs()],
                actual: x.shape().to_vec(),
            }),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.batch(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        let w = self.params.weights.value.data();
        let b = self.params.bias.value.data();
        let mut out = vec![0.0; n * o];
        for row in out.chunks_mut(o) {
            row.copy_from_slice(b);
        }
        gemm(n, i, o, x.data(), false, w, true, 1.0, &mut out);
        Tensor::from_vec(&[n, o], out)
    }

    /// Gradient with respect to the input only; parameters are untouched.
    pub fn input_grad(&self, grad_out: &Tensor) -> Result<Tensor> {
        let (i, o) = (self.inputs(), self.outputs());
        let n = match *grad_out.shape() {
            [n, go] if go == o => n,
            _ => {
                return Err(Error::ShapeMismatch {
                    expected: vec![grad_out.shape()[0], o],
                    actual: grad_out.shape().to_vec(),
                })
            }
        };
        let w = self.params.weights.value.data();
        let mut gin = vec![0.0; n * i];
        gemm(n, o, i, grad_out.data(), false, w, false, 0.0, &mut gin);
        Tensor::from_vec(&[n, i], gin)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let n = self.batch(x)?;
        let (i, o) = (self.inputs(), self.outputs());
        grad_out.expect_shape(&[n, o])?;
        let gin = self.input_grad(grad_out)?;
        let gw = self.params.weights.grad.data_mut();
        gemm(o, n, i, grad_out.data(), true, x.data(), false, 1.0, gw);
        let gb = self.params.bias.grad.data_mut();
        for ni in 0..n {
            for (b, g) in gb.iter_mut().zip(&grad_out.data()[ni * o..][..o]) {
                *b += g;
            }
        }
        Ok(gin)
    }
}

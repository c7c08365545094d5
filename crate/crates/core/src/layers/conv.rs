use alloc::vec;

use super::LayerParams;
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// 3x3 convolution (cross-correlation), stride 1, zero padding 1.
///
/// Weights are `[out, in, 3, 3]`, bias is `[out]`. Inputs may be `[C,H,W]`
/// or `[N,C,H,W]`; the output keeps the input's rank and spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub params: LayerParams,
}

const K: usize = 3;
const KK: usize = K * K;

impl Conv2d {
    pub fn new(name: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            params: LayerParams::new(
                name,
                Tensor::zeros(&[out_channels, in_channels, K, K]),
                Tensor::zeros(&[out_channels]),
            ),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.params.weights.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.params.weights.value.shape()[0]
    }

    fn check_input(&self, x: &Tensor) -> Result<[usize; 4]> {
        let dims = x.as_batch4()?;
        if dims[1] != self.in_channels() {
            return Err(Error::ShapeMismatch {
                expected: vec![dims[0], self.in_channels(), dims[2], dims[3]],
                actual: x.shape().to_vec(),
            });
        }
        Ok(dims)
    }

    fn output_shape(&self, x: &Tensor, [n, _, h, w]: [usize; 4]) -> alloc::vec::Vec<usize> {
        if x.shape().len() == 3 {
            vec![self.out_channels(), h, w]
        } else {
            vec![n, self.out_channels(), h, w]
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims @ [n, c, h, w] = self.check_input(x)?;
        let o = self.out_channels();
        let hw = h * w;
        let weights = self.params.weights.value.data();
        let bias = self.params.bias.value.data();
        let mut cols = vec![0.0; c * KK * hw];
        let mut out = vec![0.0; n * o * hw];
        for ni in 0..n {
            im2col(&x.data()[ni * c * hw..][..c * hw], c, h, w, &mut cols);
            let dst = &mut out[ni * o * hw..][..o * hw];
            for (row, b) in dst.chunks_mut(hw).zip(bias) {
                row.fill(*b);
            }
            gemm(o, c * KK, hw, weights, false, &cols, false, 1.0, dst);
        }
        Tensor::from_vec(&self.output_shape(x, dims), out)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `want_input_grad` is set.
    pub fn backward(
        &mut self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let dims @ [n, c, h, w] = self.check_input(x)?;
        let o = self.out_channels();
        let expected = self.output_shape(x, dims);
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                expected,
                actual: grad_out.shape().to_vec(),
            });
        }
        let hw = h * w;
        let ck = c * KK;
        let gout = grad_out.data();
        let mut cols = vec![0.0; ck * hw];
        let mut gin = want_input_grad.then(|| vec![0.0; n * c * hw]);
        // The input gradient is a convolution of the output gradient with the
        // spatially flipped, channel-transposed kernel: [C, O*9] x im2col(grad).
        let flipped = want_input_grad.then(|| self.flipped_kernel());
        let mut gcols = vec![0.0; if want_input_grad { o * KK * hw } else { 0 }];
        for ni in 0..n {
            let g = &gout[ni * o * hw..][..o * hw];
            im2col(&x.data()[ni * c * hw..][..c * hw], c, h, w, &mut cols);
            gemm(
                o,
                hw,
                ck,
                g,
                false,
                &cols,
                true,
                1.0,
                self.params.weights.grad.data_mut(),
            );
            for (b, row) in self
                .params
                .bias
                .grad
                .data_mut()
                .iter_mut()
                .zip(g.chunks(hw))
            {
                *b += row.iter().sum::<f64>();
            }
            if let (Some(gin), Some(flipped)) = (gin.as_mut(), flipped.as_ref()) {
                im2col(g, o, h, w, &mut gcols);
                let dst = &mut gin[ni * c * hw..][..c * hw];
                gemm(c, o * KK, hw, flipped, false, &gcols, false, 0.0, dst);
            }
        }
        gin.map(|g| Tensor::from_vec(x.shape(), g)).transpose()
    }
}

impl Conv2d {
    /// `[C, O*9]` with entry `(c, o*9 + ky*3 + kx)` = `W[o][c][2-ky][2-kx]`.
    fn flipped_kernel(&self) -> alloc::vec::Vec<f64> {
        let (o, c) = (self.out_channels(), self.in_channels());
        let w = self.params.weights.value.data();
        let mut out = vec![0.0; c * o * KK];
        for ci in 0..c {
            for oi in 0..o {
                for k in 0..KK {
                    out[ci * o * KK + oi * KK + k] = w[(oi * c + ci) * KK + (KK - 1 - k)];
                }
            }
        }
        out
    }
}

/// Unfolds `[C,H,W]` into `[C*9, H*W]`: row `c*9 + ky*3 + kx` holds the input
/// shifted by `(ky-1, kx-1)` with zeros outside.
fn im2col(src: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..][..hw];
        for ky in 0..K {
            for kx in 0..K {
                let dst = &mut cols[(ci * KK + ky * K + kx) * hw..][..hw];
                for y in 0..h {
                    let row = &mut dst[y * w..][..w];
                    let Some(sy) = shifted(y, ky, h) else {
                        row.fill(0.0);
                        continue;
                    };
                    let s = &plane[sy * w..][..w];
                    match kx {
                        0 => {
                            row[0] = 0.0;
                            row[1..].copy_from_slice(&s[..w - 1]);
                        }
                        1 => row.copy_from_slice(s),
                        _ => {
                            row[..w - 1].copy_from_slice(&s[1..]);
                            row[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn shifted(y: usize, ky: usize, h: usize) -> Option<usize> {
    let sy = (y + ky).checked_sub(1)?;
    (sy < h).then_some(sy)
}

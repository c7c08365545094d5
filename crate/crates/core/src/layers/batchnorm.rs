use alloc::vec;
use alloc::vec::Vec;

use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Mode;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[N,C,H,W]`.
///
/// `params.weights` is the scale (gamma), `params.bias` the shift (beta).
/// Running statistics follow `running = (1 - momentum) * running + momentum * batch`,
/// with the unbiased batch variance feeding the running variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub params: LayerParams,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub(crate) x_hat: Tensor,
    pub(crate) inv_std: Vec<f64>,
    /// Batch mean and unbiased variance; `None` for infer-mode passes.
    pub(crate) batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            params: LayerParams::new(
                name,
                Tensor::full(&[channels], 1.0),
                Tensor::zeros(&[channels]),
            ),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.params.weights.value.len()
    }

    fn dims(&self, x: &Tensor) -> Result<[usize; 4]> {
        match *x.shape() {
            [n, c, h, w] if c == self.channels() => Ok([n, c, h, w]),
            [n, _, h, w] => Err(Error::ShapeMismatch {
                expected: vec![n, self.channels(), h, w],
                actual: x.shape().to_vec(),
            }),
            _ => Err(Error::InvalidShape(x.shape().to_vec())),
        }
    }

    /// Normalizes and, in train mode, folds the batch statistics into the running ones.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        let (y, cache) = self.normalize_batch(x, mode)?;
        self.update_running(&cache);
        Ok((y, cache))
    }

    /// Forward pass without touching running statistics. Train mode normalizes
    /// with the batch statistics and records them in the cache.
    pub fn normalize_batch(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        let [n, c, h, w] = self.dims(x)?;
        let (mean, inv_std, batch_stats) = self.statistics(x, mode)?;
        Ok(self.normalize(x, [n, c, h * w], &mean, inv_std, batch_stats))
    }

    /// Mean and inverse standard deviation used to normalize `x`, plus the
    /// batch mean and unbiased variance in train mode.
    #[allow(clippy::type_complexity)]
    pub(crate) fn statistics(
        &self,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(Vec<f64>, Vec<f64>, Option<(Vec<f64>, Vec<f64>)>)> {
        let [n, c, h, w] = self.dims(x)?;
        let hw = h * w;
        if mode == Mode::Infer {
            let inv_std = self
                .running_var
                .data()
                .iter()
                .map(|v| 1.0 / libm::sqrt(v + BN_EPSILON))
                .collect();
            return Ok((self.running_mean.data().to_vec(), inv_std, None));
        }
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let count = (n * hw) as f64;
        let planes = |ci: usize| (0..n).map(move |ni| &x.data()[(ni * c + ci) * hw..][..hw]);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let m = planes(ci).map(|p| p.iter().sum::<f64>()).sum::<f64>() / count;
            let v = planes(ci)
                .map(|p| p.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum::<f64>()
                / count;
            mean[ci] = m;
            var[ci] = v;
        }
        let inv_std = var
            .iter()
            .map(|v| 1.0 / libm::sqrt(v + BN_EPSILON))
            .collect();
        let unbias = count / (count - 1.0);
        let unbiased_var = var.iter().map(|v| v * unbias).collect();
        Ok((mean.clone(), inv_std, Some((mean, unbiased_var))))
    }

    /// Applies the running-statistic update recorded by a train-mode pass.
    pub fn update_running(&mut self, cache: &BnCache) {
        let Some((mean, var)) = &cache.batch_stats else {
            return;
        };
        for (rm, m) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
        }
        for (rv, v) in self.running_var.data_mut().iter_mut().zip(var) {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v;
        }
    }

    fn normalize(
        &self,
        x: &Tensor,
        [n, c, hw]: [usize; 3],
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: Option<(Vec<f64>, Vec<f64>)>,
    ) -> (Tensor, BnCache) {
        let gamma = self.params.weights.value.data();
        let beta = self.params.bias.value.data();
        let mut x_hat = x.clone();
        let mut out = x.clone();
        let planes = x_hat
            .data_mut()
            .chunks_mut(hw)
            .zip(out.data_mut().chunks_mut(hw));
        for (i, (xh, o)) in planes.enumerate() {
            let ci = i % c;
            let (m, s, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
            for (xv, ov) in xh.iter_mut().zip(o.iter_mut()) {
                *xv = (*xv - m) * s;
                *ov = g * *xv + b;
            }
        }
        debug_assert_eq!(x.len(), n * c * hw);
        (
            out,
            BnCache {
                x_hat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Accumulates scale/shift gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BnCache, grad_out: &Tensor) -> Result<Tensor> {
        grad_out.expect_shape(cache.x_hat.shape())?;
        let [n, c, h, w] = self.dims(grad_out)?;
        let hw = h * w;
        let count = (n * hw) as f64;
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let plane = |ni: usize, ci: usize| (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
        let mut gin = vec![0.0; dy.len()];
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for ni in 0..n {
                let r = plane(ni, ci);
                sum_dy += dy[r.clone()].iter().sum::<f64>();
                sum_dy_xh += dy[r.clone()]
                    .iter()
                    .zip(&xh[r])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            self.params.weights.grad.data_mut()[ci] += sum_dy_xh;
            self.params.bias.grad.data_mut()[ci] += sum_dy;
            let scale = self.params.weights.value.data()[ci] * cache.inv_std[ci];
            let (mean_dy, mean_dy_xh) = match cache.batch_stats {
                Some(_) => (sum_dy / count, sum_dy_xh / count),
                None => (0.0, 0.0),
            };
            for ni in 0..n {
                let r = plane(ni, ci);
                let out = &mut gin[r.clone()];
                for ((g, &d), &x) in out.iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                    *g = scale * (d - mean_dy - x * mean_dy_xh);
                }
            }
        }
        Tensor::from_vec(grad_out.shape(), gin)
    }
}

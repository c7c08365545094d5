//! Fused conv → batchnorm → ReLU → 2x2 max-pool block.
//!
//! Computes exactly what chaining [`Conv2d`], [`BatchNorm2d`], [`relu`](super::relu)
//! and [`maxpool2x2`](super::maxpool2x2) computes, but keeps only the conv input,
//! the normalized activations and the pooling argmax. The ReLU mask is recomputed
//! from the normalized values, and the pooled gradient reaches at most one
//! element per window, so the backward pass never materializes a dense
//! batchnorm output gradient.

use alloc::vec;
use alloc::vec::Vec;

use super::{BatchNorm2d, BnCache, Conv2d};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Clone, Debug)]
pub struct BlockCache {
    conv_input: Tensor,
    bn: BnCache,
    /// Flat index into the batchnorm output for each pooled element.
    argmax: Vec<usize>,
}

impl BlockCache {
    pub fn bn_cache(&self) -> &BnCache {
        &self.bn
    }
}

pub fn block_forward(
    conv: &Conv2d,
    bn: &BatchNorm2d,
    x: &Tensor,
    mode: Mode,
) -> Result<(Tensor, BlockCache)> {
    let conv_out = conv.forward(x)?;
    let [n, c, h, w] = conv_out.as_batch4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddPoolInput {
            height: h,
            width: w,
        });
    }
    let (mean, inv_std, batch_stats) = bn.statistics(&conv_out, mode)?;
    let gamma = bn.params.weights.value.data();
    let beta = bn.params.bias.value.data();
    let (hw, oh, ow) = (h * w, h / 2, w / 2);

    let mut x_hat = conv_out;
    let mut pooled = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; pooled.len()];
    for (plane, xh) in x_hat.data_mut().chunks_mut(hw).enumerate() {
        let ci = plane % c;
        let (m, s, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
        for v in xh.iter_mut() {
            *v = (*v - m) * s;
        }
        let act = |i: usize| {
            let y = g * xh[i] + b;
            if y > 0.0 {
                y
            } else {
                0.0
            }
        };
        for y in 0..oh {
            for x in 0..ow {
                let first = 2 * y * w + 2 * x;
                let mut best = first;
                let mut best_val = act(first);
                for i in [first + 1, first + w, first + w + 1] {
                    let v = act(i);
                    if v > best_val {
                        best = i;
                        best_val = v;
                    }
                }
                let o = (plane * oh + y) * ow + x;
                pooled[o] = best_val;
                argmax[o] = plane * hw + best;
            }
        }
    }
    let pooled = Tensor::from_vec(&[n, c, oh, ow], pooled)?;
    Ok((
        pooled,
        BlockCache {
            conv_input: x.clone(),
            bn: BnCache {
                x_hat,
                inv_std,
                batch_stats,
            },
            argmax,
        },
    ))
}

/// Smallest distance of any ReLU input from zero, or of any pooling window's
/// runner-up from its maximum. Below the finite-difference step, numerical
/// gradients straddle a kink and stop being meaningful.
pub fn block_kink_margin(bn: &BatchNorm2d, cache: &BlockCache) -> f64 {
    let Ok([_, c, h, w]) = cache.bn.x_hat.as_batch4() else {
        return 0.0;
    };
    let gamma = bn.params.weights.value.data();
    let beta = bn.params.bias.value.data();
    let mut margin = f64::INFINITY;
    for (plane, xh) in cache.bn.x_hat.data().chunks(h * w).enumerate() {
        let ci = plane % c;
        let pre = |i: usize| gamma[ci] * xh[i] + beta[ci];
        for i in 0..xh.len() {
            margin = margin.min(pre(i).abs());
        }
        for y in (0..h).step_by(2) {
            for x in (0..w).step_by(2) {
                let mut vals = [
                    y * w + x,
                    y * w + x + 1,
                    (y + 1) * w + x,
                    (y + 1) * w + x + 1,
                ]
                .map(|i| pre(i).max(0.0));
                vals.sort_by(|a, b| b.total_cmp(a));
                if vals[0] > 0.0 {
                    margin = margin.min(vals[0] - vals[1]);
                }
            }
        }
    }
    margin
}

/// Accumulates conv and batchnorm parameter gradients; returns the block's
/// input gradient when requested.
pub fn block_backward(
    conv: &mut Conv2d,
    bn: &mut BatchNorm2d,
    cache: &BlockCache,
    grad_pooled: &Tensor,
    want_input_grad: bool,
) -> Result<Option<Tensor>> {
    if grad_pooled.len() != cache.argmax.len() {
        return Err(Error::LengthMismatch(cache.argmax.len(), grad_pooled.len()));
    }
    let xh = cache.bn.x_hat.data();
    let [n, c, h, w] = cache.bn.x_hat.as_batch4()?;
    let hw = h * w;
    let count = (n * hw) as f64;
    let gamma = bn.params.weights.value.data().to_vec();
    let beta = bn.params.bias.value.data().to_vec();

    // Sparse gradient at the batchnorm output: one surviving entry per window.
    let mut sparse: Vec<(usize, f64)> = Vec::with_capacity(cache.argmax.len());
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xh = vec![0.0; c];
    for (&i, &g) in cache.argmax.iter().zip(grad_pooled.data()) {
        let ci = (i / hw) % c;
        if gamma[ci] * xh[i] + beta[ci] > 0.0 {
            sparse.push((i, g));
            sum_dy[ci] += g;
            sum_dy_xh[ci] += g * xh[i];
        }
    }
    for ci in 0..c {
        bn.params.weights.grad.data_mut()[ci] += sum_dy_xh[ci];
        bn.params.bias.grad.data_mut()[ci] += sum_dy[ci];
    }

    let train = cache.bn.batch_stats.is_some();
    let mut grad_conv = vec![0.0; xh.len()];
    for (plane, (gc, xp)) in grad_conv.chunks_mut(hw).zip(xh.chunks(hw)).enumerate() {
        let ci = plane % c;
        if train {
            let a = sum_dy[ci] / count;
            let b = sum_dy_xh[ci] / count;
            let scale = gamma[ci] * cache.bn.inv_std[ci];
            for (g, x) in gc.iter_mut().zip(xp) {
                *g = -scale * (a + x * b);
            }
        }
    }
    for (i, g) in sparse {
        let ci = (i / hw) % c;
        grad_conv[i] += gamma[ci] * cache.bn.inv_std[ci] * g;
    }
    let grad_conv = Tensor::from_vec(cache.bn.x_hat.shape(), grad_conv)?;
    conv.backward(&cache.conv_input, &grad_conv, want_input_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{maxpool2x2, maxpool2x2_backward, relu, relu_backward};
    use crate::SplitMix64;

    fn randomize(t: &mut Tensor, rng: &mut SplitMix64) {
        for v in t.data_mut() {
            *v = rng.normal(0.0, 0.7);
        }
    }

    #[test]
    fn matches_unfused_chain() {
        let mut rng = SplitMix64::new(21);
        let mut conv = Conv2d::new("c", 2, 3);
        let mut bn = BatchNorm2d::new("b", 3);
        randomize(&mut conv.params.weights.value, &mut rng);
        randomize(&mut conv.params.bias.value, &mut rng);
        randomize(&mut bn.params.weights.value, &mut rng);
        randomize(&mut bn.params.bias.value, &mut rng);
        let mut x = Tensor::zeros(&[3, 2, 6, 6]);
        randomize(&mut x, &mut rng);
        let mut g = Tensor::zeros(&[3, 3, 3, 3]);
        randomize(&mut g, &mut rng);

        for mode in [Mode::Train, Mode::Infer] {
            let (mut conv_a, mut bn_a) = (conv.clone(), bn.clone());
            let c = conv_a.forward(&x).unwrap();
            let (b, bc) = bn_a.normalize_batch(&c, mode).unwrap();
            let r = relu(&b);
            let (p, idx) = maxpool2x2(&r).unwrap();
            let gr = maxpool2x2_backward(&g, &idx).unwrap();
            let gb = relu_backward(&b, &gr).unwrap();
            let gc = bn_a.backward(&bc, &gb).unwrap();
            let gx = conv_a.backward(&x, &gc, true).unwrap().unwrap();

            let (mut conv_b, mut bn_b) = (conv.clone(), bn.clone());
            let (pf, cache) = block_forward(&conv_b, &bn_b, &x, mode).unwrap();
            let gxf = block_backward(&mut conv_b, &mut bn_b, &cache, &g, true)
                .unwrap()
                .unwrap();

            assert_eq!(pf, p);
            let close = |a: &Tensor, b: &Tensor| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(u, v)| (u - v).abs() < 1e-12)
            };
            assert!(close(&gxf, &gx));
            assert!(close(
                &conv_b.params.weights.grad,
                &conv_a.params.weights.grad
            ));
            assert!(close(&bn_b.params.weights.grad, &bn_a.params.weights.grad));
            assert!(close(&bn_b.params.bias.grad, &bn_a.params.bias.grad));
        }
    }
}

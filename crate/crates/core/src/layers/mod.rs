//! Layers with hand-derived backward passes.
//!
//! Convolution, batchnorm and dense layers own their parameters and accumulate
//! parameter gradients on `backward`; the stateless operations are free functions.

mod activation;
mod batchnorm;
mod block;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{
    dropout, dropout_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
    DropoutMask,
};
pub use batchnorm::{BatchNorm2d, BnCache, BN_EPSILON, BN_MOMENTUM};
pub use block::{block_backward, block_forward, block_kink_margin, BlockCache};
pub use conv::Conv2d;
pub use dense::Dense;
pub use loss::mse_loss;
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};

use alloc::string::String;

use crate::tensor::Tensor;

/// A trainable tensor with its gradient and Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Zeroes the gradient and both Adam moments.
    pub fn reset(&mut self) {
        self.grad.fill(0.0);
        self.m.fill(0.0);
        self.v.fill(0.0);
    }
}

/// Weight and bias of one layer. For batchnorm these are scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub name: String,
    pub weights: Param,
    pub bias: Param,
}

impl LayerParams {
    pub fn new(name: impl Into<String>, weights: Tensor, bias: Tensor) -> Self {
        Self {
            name: name.into(),
            weights: Param::new(weights),
            bias: Param::new(bias),
        }
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }

    pub fn reset_optimizer_state(&mut self) {
        self.weights.reset();
        self.bias.reset();
    }

    pub fn param_count(&self) -> usize {
        self.weights.value.len() + self.bias.value.len()
    }
}

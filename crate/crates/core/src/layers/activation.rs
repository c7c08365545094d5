use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::Mode;

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Gradient of [`relu`] given its input. The derivative at 0 is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`] given its output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape(output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (1.0 - y))
        .collect();
    Tensor::from_vec(output.shape(), data)
}

/// Per-element multipliers applied by a dropout forward pass. `None` is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

/// Inverted dropout: in train mode each element is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`; infer mode is the identity.
pub fn dropout(t: &Tensor, p: f64, mode: Mode, rng: &mut SplitMix64) -> (Tensor, DropoutMask) {
    assert!(
        (0.0..1.0).contains(&p),
        "dropout probability {p} outside [0, 1)"
    );
    if mode == Mode::Infer || p == 0.0 {
        return (t.clone(), DropoutMask(None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..t.len())
        .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
        .collect();
    let mut out = t.clone();
    for (o, m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    (out, DropoutMask(Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: &DropoutMask) -> Tensor {
    match &mask.0 {
        None => grad_out.clone(),
        Some(m) => {
            let mut g = grad_out.clone();
            for (v, s) in g.data_mut().iter_mut().zip(m) {
                *v *= s;
            }
            g
        }
    }
}

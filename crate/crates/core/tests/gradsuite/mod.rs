//! Central finite-difference checks of every backward pass, shared by the
//! core test suite and the acceptance harness.
//!
//! Each check projects the layer output onto a fixed random direction `r`, so the
//! scalar under test is `sum(out * r)` and the analytic gradient is the layer's
//! backward pass applied to `r`.

use photorisk_core::gradcheck::{grad_check, DEFAULT_STEP};
use photorisk_core::layers::{
    block_backward, block_forward, block_kink_margin, dropout, dropout_backward, maxpool2x2,
    maxpool2x2_backward, mse_loss, relu, relu_backward, sigmoid, sigmoid_backward, BatchNorm2d,
    Conv2d, Dense,
};
use photorisk_core::model::{ModelConfig, ModelWeights};
use photorisk_core::{Mode, SplitMix64, Tensor};

const LAYER_TOL: f64 = 1e-6;
const MODEL_TOL: f64 = 1e-5;
const TRIALS: u64 = 20;
const KINK_MARGIN: f64 = 1e-4;
/// Rounding in the batch mean and variance swamps central differences below this step.
const BN_STEP: f64 = 1e-4;
const MSE_ABS_TOL: f64 = 1e-8;

pub type Check = fn() -> Result<f64, String>;

/// Every check, by name. Each returns the worst error it saw.
#[allow(dead_code)]
pub const CHECKS: [(&str, Check); 10] = [
    ("conv", conv_input_and_parameter_gradients),
    ("batchnorm", batchnorm_gradients_in_both_modes),
    ("relu", relu_gradient_away_from_zero),
    ("maxpool", maxpool_gradient_without_ties),
    ("dense", dense_input_and_parameter_gradients),
    ("dropout", dropout_gradient_with_fixed_mask),
    ("sigmoid", sigmoid_gradient),
    ("mse", mse_gradient_absolute),
    ("conv-bn-relu-pool block", fused_block_gradients),
    ("tiny model end to end", tiny_model_end_to_end),
];

fn within(
    worst: &mut f64,
    err: f64,
    tol: f64,
    context: impl FnOnce() -> String,
) -> Result<(), String> {
    *worst = worst.max(err);
    if err <= tol {
        Ok(())
    } else {
        Err(context())
    }
}

fn random(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.normal(0.0, 1.0);
    }
    t
}

fn project(t: &Tensor, r: &Tensor) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

pub fn conv_input_and_parameter_gradients() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let shape = [2, 2, 6, 6];
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(100 + trial);
        let mut conv = Conv2d::new("c", 2, 3);
        conv.params.weights.value = random(&[3, 2, 3, 3], &mut rng);
        conv.params.bias.value = random(&[3], &mut rng);
        let x = random(&shape, &mut rng);
        let r = random(&[2, 3, 6, 6], &mut rng);

        let gx = conv.backward(&x, &r, true).unwrap().unwrap();
        let err = grad_check(
            |v| project(&conv.forward(&with_data(&shape, v)).unwrap(), &r),
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("trial {trial}: input error {err:e}")
        })?;

        let base = conv.clone();
        let werr = grad_check(
            |v| {
                let mut c = base.clone();
                c.params.weights.value = with_data(&[3, 2, 3, 3], v);
                project(&c.forward(&x).unwrap(), &r)
            },
            base.params.weights.value.data(),
            conv.params.weights.grad.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, werr, LAYER_TOL, || {
            format!("trial {trial}: weight error {werr:e}")
        })?;

        let berr = grad_check(
            |v| {
                let mut c = base.clone();
                c.params.bias.value = with_data(&[3], v);
                project(&c.forward(&x).unwrap(), &r)
            },
            base.params.bias.value.data(),
            conv.params.bias.grad.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, berr, LAYER_TOL, || {
            format!("trial {trial}: bias error {berr:e}")
        })?;
    }
    Ok(worst)
}

pub fn batchnorm_gradients_in_both_modes() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let shape = [4, 3, 4, 4];
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(200 + trial);
        let mut bn = BatchNorm2d::new("b", 3);
        bn.params.weights.value = random(&[3], &mut rng);
        bn.params.bias.value = random(&[3], &mut rng);
        bn.running_mean = random(&[3], &mut rng);
        bn.running_var = random(&[3], &mut rng).map(|v| v.abs() + 0.5);
        let x = random(&shape, &mut rng);
        let r = random(&shape, &mut rng);

        for mode in [Mode::Train, Mode::Infer] {
            let base = bn.clone();
            let mut layer = bn.clone();
            let (_, cache) = layer.normalize_batch(&x, mode).unwrap();
            let gx = layer.backward(&cache, &r).unwrap();
            let out = |b: &BatchNorm2d, x: &Tensor| b.normalize_batch(x, mode).unwrap().0;

            let err = grad_check(
                |v| project(&out(&base, &with_data(&shape, v)), &r),
                x.data(),
                gx.data(),
                BN_STEP,
            );
            within(&mut worst, err, LAYER_TOL, || {
                format!("trial {trial} {mode:?}: input error {err:e}")
            })?;

            let gerr = grad_check(
                |v| {
                    let mut b = base.clone();
                    b.params.weights.value = with_data(&[3], v);
                    project(&out(&b, &x), &r)
                },
                base.params.weights.value.data(),
                layer.params.weights.grad.data(),
                BN_STEP,
            );
            within(&mut worst, gerr, LAYER_TOL, || {
                format!("trial {trial} {mode:?}: scale error {gerr:e}")
            })?;

            let berr = grad_check(
                |v| {
                    let mut b = base.clone();
                    b.params.bias.value = with_data(&[3], v);
                    project(&out(&b, &x), &r)
                },
                base.params.bias.value.data(),
                layer.params.bias.grad.data(),
                BN_STEP,
            );
            within(&mut worst, berr, LAYER_TOL, || {
                format!("trial {trial} {mode:?}: shift error {berr:e}")
            })?;
        }
    }
    Ok(worst)
}

pub fn relu_gradient_away_from_zero() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(300 + trial);
        let x = random(&[5, 7], &mut rng).map(|v| if v.abs() < KINK_MARGIN { 0.5 } else { v });
        let r = random(&[5, 7], &mut rng);
        let gx = relu_backward(&x, &r).unwrap();
        let err = grad_check(
            |v| project(&relu(&with_data(&[5, 7], v)), &r),
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("trial {trial}: {err:e}")
        })?;
    }
    Ok(worst)
}

pub fn maxpool_gradient_without_ties() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let shape = [2, 3, 4, 6];
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(400 + trial);
        // Distinct values spaced far wider than the probe step.
        let mut order: Vec<usize> = (0..2 * 3 * 4 * 6).collect();
        rng.shuffle(&mut order);
        let x = with_data(
            &shape,
            &order.iter().map(|&i| i as f64 * 0.01).collect::<Vec<_>>(),
        );
        let (out, idx) = maxpool2x2(&x).unwrap();
        let r = random(out.shape(), &mut rng);
        let gx = maxpool2x2_backward(&r, &idx).unwrap();
        let err = grad_check(
            |v| project(&maxpool2x2(&with_data(&shape, v)).unwrap().0, &r),
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("trial {trial}: {err:e}")
        })?;
    }
    Ok(worst)
}

pub fn dense_input_and_parameter_gradients() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(500 + trial);
        let mut dense = Dense::new("d", 5, 4);
        dense.params.weights.value = random(&[4, 5], &mut rng);
        dense.params.bias.value = random(&[4], &mut rng);
        let x = random(&[3, 5], &mut rng);
        let r = random(&[3, 4], &mut rng);
        let base = dense.clone();
        let gx = dense.backward(&x, &r).unwrap();

        let err = grad_check(
            |v| project(&base.forward(&with_data(&[3, 5], v)).unwrap(), &r),
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("trial {trial}: input error {err:e}")
        })?;
        let werr = grad_check(
            |v| {
                let mut d = base.clone();
                d.params.weights.value = with_data(&[4, 5], v);
                project(&d.forward(&x).unwrap(), &r)
            },
            base.params.weights.value.data(),
            dense.params.weights.grad.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, werr, LAYER_TOL, || {
            format!("trial {trial}: weight error {werr:e}")
        })?;
        let berr = grad_check(
            |v| {
                let mut d = base.clone();
                d.params.bias.value = with_data(&[4], v);
                project(&d.forward(&x).unwrap(), &r)
            },
            base.params.bias.value.data(),
            dense.params.bias.grad.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, berr, LAYER_TOL, || {
            format!("trial {trial}: bias error {berr:e}")
        })?;
    }
    Ok(worst)
}

pub fn dropout_gradient_with_fixed_mask() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(600 + trial);
        let x = random(&[4, 8], &mut rng);
        let r = random(&[4, 8], &mut rng);
        let mask_seed = 9000 + trial;
        let (_, mask) = dropout(&x, 0.3, Mode::Train, &mut SplitMix64::new(mask_seed));
        let gx = dropout_backward(&r, &mask);
        let err = grad_check(
            |v| {
                let t = with_data(&[4, 8], v);
                let (out, _) = dropout(&t, 0.3, Mode::Train, &mut SplitMix64::new(mask_seed));
                project(&out, &r)
            },
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("trial {trial}: {err:e}")
        })?;
    }
    Ok(worst)
}

pub fn sigmoid_gradient() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(700 + trial);
        let x = random(&[6, 1], &mut rng).map(|v| 3.0 * v);
        let r = random(&[6, 1], &mut rng);
        let gx = sigmoid_backward(&sigmoid(&x), &r).unwrap();
        let err = grad_check(
            |v| project(&sigmoid(&with_data(&[6, 1], v)), &r),
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("trial {trial}: {err:e}")
        })?;
    }
    Ok(worst)
}

pub fn mse_gradient_absolute() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = SplitMix64::new(800 + trial);
        let pred = random(&[7, 1], &mut rng);
        let target = random(&[7, 1], &mut rng);
        let (_, g) = mse_loss(&pred, &target).unwrap();
        let numeric = photorisk_core::gradcheck::numerical_gradient(
            |v| mse_loss(&with_data(&[7, 1], v), &target).unwrap().0,
            pred.data(),
            DEFAULT_STEP,
        );
        for (a, n) in g.data().iter().zip(&numeric) {
            within(&mut worst, (a - n).abs(), MSE_ABS_TOL, || {
                format!("trial {trial}: {a} vs {n}")
            })?;
        }
    }
    Ok(worst)
}

pub fn fused_block_gradients() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let shape = [3, 2, 6, 6];
    let mut checked = 0;
    let mut seed = 1000;
    while checked < TRIALS {
        seed += 1;
        let mut rng = SplitMix64::new(seed);
        let mut conv = Conv2d::new("c", 2, 3);
        let mut bn = BatchNorm2d::new("b", 3);
        conv.params.weights.value = random(&[3, 2, 3, 3], &mut rng);
        conv.params.bias.value = random(&[3], &mut rng);
        bn.params.weights.value = random(&[3], &mut rng);
        bn.params.bias.value = random(&[3], &mut rng);
        let x = random(&shape, &mut rng);
        let (out, cache) = block_forward(&conv, &bn, &x, Mode::Train).unwrap();
        if block_kink_margin(&bn, &cache) < KINK_MARGIN {
            continue;
        }
        checked += 1;
        let r = random(out.shape(), &mut rng);
        let (base_conv, base_bn) = (conv.clone(), bn.clone());
        let gx = block_backward(&mut conv, &mut bn, &cache, &r, true)
            .unwrap()
            .unwrap();
        let f = |c: &Conv2d, b: &BatchNorm2d, x: &Tensor| {
            project(&block_forward(c, b, x, Mode::Train).unwrap().0, &r)
        };

        let err = grad_check(
            |v| f(&base_conv, &base_bn, &with_data(&shape, v)),
            x.data(),
            gx.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, err, LAYER_TOL, || {
            format!("seed {seed}: input error {err:e}")
        })?;
        let werr = grad_check(
            |v| {
                let mut c = base_conv.clone();
                c.params.weights.value = with_data(&[3, 2, 3, 3], v);
                f(&c, &base_bn, &x)
            },
            base_conv.params.weights.value.data(),
            conv.params.weights.grad.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, werr, LAYER_TOL, || {
            format!("seed {seed}: conv weight error {werr:e}")
        })?;
        let gerr = grad_check(
            |v| {
                let mut b = base_bn.clone();
                b.params.weights.value = with_data(&[3], v);
                f(&base_conv, &b, &x)
            },
            base_bn.params.weights.value.data(),
            bn.params.weights.grad.data(),
            DEFAULT_STEP,
        );
        within(&mut worst, gerr, LAYER_TOL, || {
            format!("seed {seed}: bn scale error {gerr:e}")
        })?;
    }
    Ok(worst)
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        conv_channels: [2, 2, 2],
        image_size: 8,
        seed,
        ..ModelConfig::default()
    }
}

/// Every named tensor of the model flattened in a fixed order.
fn flatten_params(w: &ModelWeights) -> (Vec<String>, Vec<Vec<usize>>, Vec<f64>) {
    let mut names = Vec::new();
    let mut shapes = Vec::new();
    let mut flat = Vec::new();
    for (name, t) in w.named_tensors() {
        if name.ends_with("running_mean") || name.ends_with("running_var") {
            continue;
        }
        names.push(name);
        shapes.push(t.shape().to_vec());
        flat.extend_from_slice(t.data());
    }
    (names, shapes, flat)
}

fn unflatten(
    base: &ModelWeights,
    names: &[String],
    shapes: &[Vec<usize>],
    v: &[f64],
) -> ModelWeights {
    let mut w = base.clone();
    let mut at = 0;
    for (name, shape) in names.iter().zip(shapes) {
        let len: usize = shape.iter().product();
        w.set_tensor(name, with_data(shape, &v[at..at + len]))
            .unwrap();
        at += len;
    }
    w
}

fn analytic_param_grads(w: &ModelWeights, names: &[String]) -> Vec<f64> {
    let mut out = Vec::new();
    for name in names {
        let layer = w
            .layers()
            .find(|l| name.starts_with(&format!("{}.", l.name)))
            .unwrap();
        let p = if name.ends_with(".weight") {
            &layer.weights
        } else {
            &layer.bias
        };
        out.extend_from_slice(p.grad.data());
    }
    out
}

pub fn tiny_model_end_to_end() -> Result<f64, String> {
    let (n, s) = (3, 8);
    let mut checked = 0;
    let mut seed = 0;
    let mut worst: f64 = 0.0;
    while checked < TRIALS {
        seed += 1;
        let mut w = ModelWeights::build(&tiny_config(seed)).unwrap();
        let mut rng = SplitMix64::new(seed ^ 0xabcd);
        for bn in &mut w.norms {
            bn.params.weights.value = random(&[2], &mut rng).map(|v| v + 1.5);
            bn.params.bias.value = random(&[2], &mut rng).map(|v| 0.3 * v);
        }
        let images = random(&[n, 1, s, s], &mut rng).map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0));
        let eye = with_data(&[n, 1], &[rng.next_f64(), rng.next_f64(), rng.next_f64()]);
        let target = with_data(&[n, 1], &[rng.next_f64(), rng.next_f64(), rng.next_f64()]);
        let drop_seed = seed + 77;

        let loss = |w: &ModelWeights, images: &Tensor, eye: &Tensor| {
            let cache = w
                .forward_batch(images, eye, Mode::Train, &mut SplitMix64::new(drop_seed))
                .unwrap();
            mse_loss(&cache.output, &target).unwrap().0
        };

        let cache = w
            .forward_batch(&images, &eye, Mode::Train, &mut SplitMix64::new(drop_seed))
            .unwrap();
        if w.kink_margin(&cache) < KINK_MARGIN {
            continue;
        }
        checked += 1;
        let (_, g) = mse_loss(&cache.output, &target).unwrap();
        let base = w.clone();
        w.zero_grad();
        let grads = w.backward(&cache, &g, true).unwrap();

        let image_err = grad_check(
            |v| loss(&base, &with_data(&[n, 1, s, s], v), &eye),
            images.data(),
            grads.image.as_ref().unwrap().data(),
            DEFAULT_STEP,
        );
        let eye_err = grad_check(
            |v| loss(&base, &images, &with_data(&[n, 1], v)),
            eye.data(),
            grads.eye.data(),
            DEFAULT_STEP,
        );
        let (names, shapes, flat) = flatten_params(&base);
        let param_err = grad_check(
            |v| loss(&unflatten(&base, &names, &shapes, v), &images, &eye),
            &flat,
            &analytic_param_grads(&w, &names),
            DEFAULT_STEP,
        );
        for (what, err) in [
            ("image", image_err),
            ("eye", eye_err),
            ("params", param_err),
        ] {
            within(&mut worst, err, MODEL_TOL, || {
                format!("seed {seed}: {what} error {err:e}")
            })?;
        }
    }
    Ok(worst)
}

//! The dual-branch risk network.
//!
//! Image branch: three blocks of conv3x3 → batchnorm → ReLU → maxpool2x2,
//! flattened into a dense layer with ReLU. Eye branch: the normalized variance
//! scalar through two dense+ReLU+dropout layers. The two feature vectors are
//! concatenated and passed through dense+ReLU+dropout and a final dense layer
//! with a sigmoid.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{
    block_backward, block_forward, block_kink_margin, dropout, dropout_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, BatchNorm2d, BlockCache, Conv2d, Dense, DropoutMask,
    LayerParams,
};
use crate::rng::SplitMix64;
use crate::synth::{self, EnvImage, EyeVariance, LuxValue, IMAGE_SIZE};
use crate::tensor::Tensor;
use crate::Mode;

pub const FORMAT_VERSION: &str = "1";
pub const FUSION_WIDTH: usize = 64;
pub const DEFAULT_CANONICAL_SEED: u64 = 17;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub conv_channels: [usize; 3],
    /// Side length of the square input image.
    pub image_size: usize,
    pub image_feature_dim: usize,
    pub eye_input_dim: usize,
    pub eye_hidden: [usize; 2],
    pub fusion_hidden: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_channels: [8, 16, 32],
            image_size: IMAGE_SIZE,
            image_feature_dim: 32,
            eye_input_dim: 1,
            eye_hidden: [64, 32],
            fusion_hidden: 32,
            dropout_p: 0.3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.image_feature_dim + self.eye_hidden[1] != FUSION_WIDTH {
            return bad(format!(
                "image features ({}) + eye features ({}) must equal {FUSION_WIDTH}",
                self.image_feature_dim, self.eye_hidden[1]
            ));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(8) {
            return bad(format!(
                "image size {} must be a positive multiple of 8",
                self.image_size
            ));
        }
        if self.eye_input_dim != 1 {
            return bad(format!(
                "eye input must be a scalar, got {}",
                self.eye_input_dim
            ));
        }
        let widths = self.conv_channels.iter().chain(&self.eye_hidden);
        if widths
            .chain([&self.fusion_hidden, &self.image_feature_dim])
            .any(|&c| c == 0)
        {
            return bad("layer widths must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Spatial side of the last conv block's output.
    pub fn feature_map_size(&self) -> usize {
        self.image_size / 8
    }

    pub fn flatten_width(&self) -> usize {
        self.conv_channels[2] * self.feature_map_size() * self.feature_map_size()
    }
}

/// Sigmoid output of the network.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct RiskScore(f64);

impl RiskScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange(format!("risk score {value}")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// All parameters and running statistics of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub format_version: String,
    pub config: ModelConfig,
    /// Seed of the synthetic frame used to score bare `(lux, variance)` inputs.
    pub canonical_seed: u64,
    pub convs: [Conv2d; 3],
    pub norms: [BatchNorm2d; 3],
    pub image_fc: Dense,
    pub eye_fc: [Dense; 2],
    pub fusion_fc: [Dense; 2],
}

/// Activations kept from a forward pass for backpropagation and GradCAM.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    /// Output of the last conv block, `[N, C, s, s]`.
    pub feature_map: Tensor,
    flat: Tensor,
    image_pre: Tensor,
    eye_input: Tensor,
    eye_pre: [Tensor; 2],
    eye_drop_in: [Tensor; 2],
    eye_masks: [DropoutMask; 2],
    concat: Tensor,
    fusion_pre: Tensor,
    fusion_drop: Tensor,
    fusion_mask: DropoutMask,
    pub output: Tensor,
}

/// Input gradients returned by [`ModelWeights::backward`].
#[derive(Clone, Debug)]
pub struct InputGrads {
    pub image: Option<Tensor>,
    pub eye: Tensor,
}

fn he_init(t: &mut Tensor, fan_in: usize, rng: &mut SplitMix64) {
    let std = libm::sqrt(2.0 / fan_in as f64);
    for v in t.data_mut() {
        *v = rng.normal(0.0, std);
    }
}

impl ModelWeights {
    /// He-initialized network; batchnorm starts at scale 1, shift 0.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3] = config.conv_channels;
        let mut convs = [
            Conv2d::new("conv1", 1, c1),
            Conv2d::new("conv2", c1, c2),
            Conv2d::new("conv3", c2, c3),
        ];
        let norms = [
            BatchNorm2d::new("bn1", c1),
            BatchNorm2d::new("bn2", c2),
            BatchNorm2d::new("bn3", c3),
        ];
        let mut image_fc = Dense::new("image_fc", config.flatten_width(), config.image_feature_dim);
        let mut eye_fc = [
            Dense::new("eye_fc1", config.eye_input_dim, config.eye_hidden[0]),
            Dense::new("eye_fc2", config.eye_hidden[0], config.eye_hidden[1]),
        ];
        let mut fusion_fc = [
            Dense::new("fusion_fc1", FUSION_WIDTH, config.fusion_hidden),
            Dense::new("fusion_fc2", config.fusion_hidden, 1),
        ];

        let mut rng = SplitMix64::new(config.seed);
        for conv in &mut convs {
            let fan_in = conv.in_channels() * 9;
            he_init(&mut conv.params.weights.value, fan_in, &mut rng);
        }
        for dense in core::iter::once(&mut image_fc)
            .chain(eye_fc.iter_mut())
            .chain(fusion_fc.iter_mut())
        {
            let fan_in = dense.inputs();
            he_init(&mut dense.params.weights.value, fan_in, &mut rng);
        }
        Ok(Self {
            format_version: FORMAT_VERSION.to_string(),
            config: config.clone(),
            canonical_seed: DEFAULT_CANONICAL_SEED,
            convs,
            norms,
            image_fc,
            eye_fc,
            fusion_fc,
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.convs
            .iter()
            .map(|c| &c.params)
            .chain(self.norms.iter().map(|n| &n.params))
            .chain(core::iter::once(&self.image_fc.params))
            .chain(self.eye_fc.iter().map(|d| &d.params))
            .chain(self.fusion_fc.iter().map(|d| &d.params))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.convs
            .iter_mut()
            .map(|c| &mut c.params)
            .chain(self.norms.iter_mut().map(|n| &mut n.params))
            .chain(core::iter::once(&mut self.image_fc.params))
            .chain(self.eye_fc.iter_mut().map(|d| &mut d.params))
            .chain(self.fusion_fc.iter_mut().map(|d| &mut d.params))
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.layers().map(LayerParams::param_count).sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(LayerParams::zero_grad);
    }

    /// Clears gradients and Adam moments, leaving only what a weight file stores.
    pub fn reset_optimizer_state(&mut self) {
        self.layers_mut()
            .for_each(LayerParams::reset_optimizer_state);
    }

    /// Every persisted tensor by name, in a fixed order. Batchnorm layers
    /// contribute their running statistics too.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &conv.params.weights.value));
            out.push((format!("conv{}.bias", i + 1), &conv.params.bias.value));
            let bn = &self.norms[i];
            out.push((format!("bn{}.weight", i + 1), &bn.params.weights.value));
            out.push((format!("bn{}.bias", i + 1), &bn.params.bias.value));
            out.push((format!("bn{}.running_mean", i + 1), &bn.running_mean));
            out.push((format!("bn{}.running_var", i + 1), &bn.running_var));
        }
        let dense = core::iter::once(&self.image_fc)
            .chain(&self.eye_fc)
            .chain(&self.fusion_fc);
        for d in dense {
            out.push((format!("{}.weight", d.params.name), &d.params.weights.value));
            out.push((format!("{}.bias", d.params.name), &d.params.bias.value));
        }
        out
    }

    /// Replaces a named tensor, checking that the shape matches the config.
    pub fn set_tensor(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .tensor_slot(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown tensor {name}")))?;
        tensor.expect_shape(slot.shape())?;
        *slot = tensor;
        Ok(())
    }

    fn tensor_slot(&mut self, name: &str) -> Option<&mut Tensor> {
        let (layer, field) = name.split_once('.')?;
        let block = |prefix: &str| {
            layer
                .strip_prefix(prefix)
                .and_then(|i| i.parse::<usize>().ok())
                .filter(|i| (1..=3).contains(i))
                .map(|i| i - 1)
        };
        if let Some(i) = block("conv") {
            let p = &mut self.convs[i].params;
            return match field {
                "weight" => Some(&mut p.weights.value),
                "bias" => Some(&mut p.bias.value),
                _ => None,
            };
        }
        if let Some(i) = block("bn") {
            let bn = &mut self.norms[i];
            return match field {
                "weight" => Some(&mut bn.params.weights.value),
                "bias" => Some(&mut bn.params.bias.value),
                "running_mean" => Some(&mut bn.running_mean),
                "running_var" => Some(&mut bn.running_var),
                _ => None,
            };
        }
        let dense = core::iter::once(&mut self.image_fc)
            .chain(self.eye_fc.iter_mut())
            .chain(self.fusion_fc.iter_mut())
            .find(|d| d.params.name == layer)?;
        match field {
            "weight" => Some(&mut dense.params.weights.value),
            "bias" => Some(&mut dense.params.bias.value),
            _ => None,
        }
    }

    /// Stacks images into `[N, 1, S, S]`.
    pub fn image_batch(&self, images: &[&EnvImage]) -> Result<Tensor> {
        let s = self.config.image_size;
        let mut data = Vec::with_capacity(images.len() * s * s);
        for img in images {
            if img.width != s || img.height != s {
                return Err(Error::ShapeMismatch {
                    expected: vec![s, s],
                    actual: vec![img.height, img.width],
                });
            }
            data.extend_from_slice(&img.pixels);
        }
        Tensor::from_vec(&[images.len(), 1, s, s], data)
    }

    /// Batched forward pass. Train mode uses batch statistics and dropout but
    /// leaves the running statistics alone; see [`Self::commit_batch_stats`].
    pub fn forward_batch(
        &self,
        images: &Tensor,
        eye: &Tensor,
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<ForwardCache> {
        let s = self.config.image_size;
        let n = images.shape()[0];
        images.expect_shape(&[n, 1, s, s])?;
        eye.expect_shape(&[n, self.config.eye_input_dim])?;
        let p = self.config.dropout_p;

        let mut blocks = Vec::with_capacity(3);
        let mut x = images.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            let (pooled, cache) = block_forward(conv, bn, &x, mode)?;
            blocks.push(cache);
            x = pooled;
        }
        let feature_map = x;
        let flat = feature_map
            .clone()
            .reshape(&[n, self.config.flatten_width()])?;
        let image_pre = self.image_fc.forward(&flat)?;
        let image_feat = relu(&image_pre);

        let e1_pre = self.eye_fc[0].forward(eye)?;
        let e1 = relu(&e1_pre);
        let (e1d, m1) = dropout(&e1, p, mode, rng);
        let e2_pre = self.eye_fc[1].forward(&e1d)?;
        let e2 = relu(&e2_pre);
        let (e2d, m2) = dropout(&e2, p, mode, rng);

        let concat = concat_columns(&image_feat, &e2d)?;
        let fusion_pre = self.fusion_fc[0].forward(&concat)?;
        let (fusion_drop, fusion_mask) = dropout(&relu(&fusion_pre), p, mode, rng);
        let logit = self.fusion_fc[1].forward(&fusion_drop)?;
        let output = sigmoid(&logit);

        Ok(ForwardCache {
            blocks,
            feature_map,
            flat,
            image_pre,
            eye_input: eye.clone(),
            eye_pre: [e1_pre, e2_pre],
            eye_drop_in: [e1d, e2d],
            eye_masks: [m1, m2],
            concat,
            fusion_pre,
            fusion_drop,
            fusion_mask,
            output,
        })
    }

    /// Folds the batch statistics of a train-mode pass into the running statistics.
    pub fn commit_batch_stats(&mut self, cache: &ForwardCache) {
        for (bn, c) in self.norms.iter_mut().zip(&cache.blocks) {
            bn.update_running(c.bn_cache());
        }
    }

    /// Backpropagates `grad_out` (shape `[N, 1]`, d loss / d output), accumulating
    /// every parameter gradient.
    pub fn backward(
        &mut self,
        cache: &ForwardCache,
        grad_out: &Tensor,
        want_image_grad: bool,
    ) -> Result<InputGrads> {
        let n = cache.output.shape()[0];
        let g = sigmoid_backward(&cache.output, grad_out)?;
        let g = self.fusion_fc[1].backward(&cache.fusion_drop, &g)?;
        let g = dropout_backward(&g, &cache.fusion_mask);
        let g = relu_backward(&cache.fusion_pre, &g)?;
        let g = self.fusion_fc[0].backward(&cache.concat, &g)?;
        let (g_image, g_eye) = split_columns(&g, self.config.image_feature_dim)?;

        let g = dropout_backward(&g_eye, &cache.eye_masks[1]);
        let g = relu_backward(&cache.eye_pre[1], &g)?;
        let g = self.eye_fc[1].backward(&cache.eye_drop_in[0], &g)?;
        let g = dropout_backward(&g, &cache.eye_masks[0]);
        let g = relu_backward(&cache.eye_pre[0], &g)?;
        let eye = self.eye_fc[0].backward(&cache.eye_input, &g)?;

        let g = relu_backward(&cache.image_pre, &g_image)?;
        let g = self.image_fc.backward(&cache.flat, &g)?;
        let mut g = g.reshape(cache.feature_map.shape())?;
        let mut image = None;
        for i in (0..3).rev() {
            let want = i > 0 || want_image_grad;
            let (conv, bn) = (&mut self.convs[i], &mut self.norms[i]);
            match block_backward(conv, bn, &cache.blocks[i], &g, want)? {
                Some(gi) if i > 0 => g = gi,
                gi => image = gi,
            }
        }
        debug_assert_eq!(eye.shape(), &[n, self.config.eye_input_dim]);
        Ok(InputGrads { image, eye })
    }

    /// d output / d feature map for an infer-mode cache, without touching any
    /// parameter gradients.
    pub fn feature_map_gradient(&self, cache: &ForwardCache) -> Result<Tensor> {
        let n = cache.output.shape()[0];
        let g = sigmoid_backward(&cache.output, &Tensor::full(&[n, 1], 1.0))?;
        let g = self.fusion_fc[1].input_grad(&g)?;
        let g = dropout_backward(&g, &cache.fusion_mask);
        let g = relu_backward(&cache.fusion_pre, &g)?;
        let g = self.fusion_fc[0].input_grad(&g)?;
        let (g_image, _) = split_columns(&g, self.config.image_feature_dim)?;
        let g = relu_backward(&cache.image_pre, &g_image)?;
        self.image_fc
            .input_grad(&g)?
            .reshape(cache.feature_map.shape())
    }

    /// Smallest distance of any ReLU input or pooling choice in `cache` from a
    /// point where the network is not differentiable.
    pub fn kink_margin(&self, cache: &ForwardCache) -> f64 {
        let dense_pre = [
            &cache.image_pre,
            &cache.eye_pre[0],
            &cache.eye_pre[1],
            &cache.fusion_pre,
        ];
        let dense = dense_pre
            .iter()
            .flat_map(|t| t.data())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        self.norms
            .iter()
            .zip(&cache.blocks)
            .map(|(bn, b)| block_kink_margin(bn, b))
            .fold(dense, f64::min)
    }

    /// Scores one frame. Train mode is rejected: batchnorm needs a batch of two or more.
    pub fn forward(
        &self,
        image: &EnvImage,
        eye_var_norm: f64,
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<RiskScore> {
        if !(0.0..=1.0).contains(&eye_var_norm) {
            return Err(Error::OutOfRange(format!(
                "normalized eye variance {eye_var_norm}"
            )));
        }
        if mode == Mode::Train {
            return Err(Error::BatchTooSmall(1));
        }
        let images = self.image_batch(&[image])?;
        let eye = Tensor::from_vec(&[1, 1], vec![eye_var_norm])?;
        let cache = self.forward_batch(&images, &eye, mode, rng)?;
        RiskScore::new(cache.output.data()[0])
    }

    /// Deterministic inference on one frame.
    pub fn infer(&self, image: &EnvImage, eye_var_norm: f64) -> Result<RiskScore> {
        self.forward(image, eye_var_norm, Mode::Infer, &mut SplitMix64::new(0))
    }

    /// Scores raw `(lux, variance)` using the canonical synthetic frame for `lux`.
    pub fn predict(&self, lux: LuxValue, eye_var: EyeVariance) -> Result<RiskScore> {
        let image = synth::canonical_image(lux, self.canonical_seed);
        self.infer(&image, synth::normalize_variance(eye_var))
    }

    /// Infer-mode output of the image branch (after its ReLU) for one frame.
    pub fn image_features(&self, image: &EnvImage) -> Result<Vec<f64>> {
        let mut x = self.image_batch(&[image])?;
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            x = block_forward(conv, bn, &x, Mode::Infer)?.0;
        }
        let flat = x.reshape(&[1, self.config.flatten_width()])?;
        Ok(relu(&self.image_fc.forward(&flat)?).into_data())
    }

    /// Infer-mode risk from precomputed [`Self::image_features`], running only
    /// the eye branch and the fusion head.
    pub fn score_from_features(&self, image_features: &[f64], eye_var_norm: f64) -> Result<f64> {
        let feat = Tensor::from_vec(&[1, self.config.image_feature_dim], image_features.to_vec())?;
        let eye = Tensor::from_vec(&[1, 1], vec![eye_var_norm])?;
        let e1 = relu(&self.eye_fc[0].forward(&eye)?);
        let e2 = relu(&self.eye_fc[1].forward(&e1)?);
        let concat = concat_columns(&feat, &e2)?;
        let hidden = relu(&self.fusion_fc[0].forward(&concat)?);
        Ok(sigmoid(&self.fusion_fc[1].forward(&hidden)?).data()[0])
    }

    /// Infer-mode scores for many samples, batched to bound memory.
    pub fn infer_many(&self, images: &[&EnvImage], eye_norm: &[f64]) -> Result<Vec<f64>> {
        if images.len() != eye_norm.len() {
            return Err(Error::LengthMismatch(images.len(), eye_norm.len()));
        }
        const CHUNK: usize = 64;
        let mut rng = SplitMix64::new(0);
        let mut out = Vec::with_capacity(images.len());
        for (imgs, eyes) in images.chunks(CHUNK).zip(eye_norm.chunks(CHUNK)) {
            let batch = self.image_batch(imgs)?;
            let eye = Tensor::from_vec(&[eyes.len(), 1], eyes.to_vec())?;
            let cache = self.forward_batch(&batch, &eye, Mode::Infer, &mut rng)?;
            out.extend_from_slice(cache.output.data());
        }
        Ok(out)
    }
}

fn concat_columns(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, wa, wb) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * wa..][..wa]);
        out.extend_from_slice(&b.data()[i * wb..][..wb]);
    }
    Tensor::from_vec(&[n, wa + wb], out)
}

fn split_columns(t: &Tensor, left: usize) -> Result<(Tensor, Tensor)> {
    let (n, w) = (t.shape()[0], t.shape()[1]);
    let right = w - left;
    let mut a = Vec::with_capacity(n * left);
    let mut b = Vec::with_capacity(n * right);
    for row in t.data().chunks(w) {
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    Ok((
        Tensor::from_vec(&[n, left], a)?,
        Tensor::from_vec(&[n, right], b)?,
    ))
}

//! GradCAM saliency over the image branch and exact Shapley attribution over
//! the two scalar inputs.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::synth::{self, EnvImage, EyeVariance, LuxValue, Sample};
use crate::tensor::Tensor;
use crate::{Mode, SplitMix64};

/// Layer whose activations GradCAM weights.
pub const GRADCAM_LAYER: &str = "conv3";

/// Saliency grid at input resolution, normalized so the maximum is 1
/// (or all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<f64>,
    pub source_layer: String,
}

impl Heatmap {
    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(0.0, f64::max)
    }

    /// Mean heat over pixels where `mask` is set and where it is not.
    /// Either mean is `None` when that region is empty.
    pub fn region_means(&self, mask: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
        if mask.len() != self.grid.len() {
            return Err(Error::LengthMismatch(self.grid.len(), mask.len()));
        }
        let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
        for (&h, &m) in self.grid.iter().zip(mask) {
            if m {
                sin += h;
                nin += 1;
            } else {
                sout += h;
                nout += 1;
            }
        }
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        Ok((mean(sin, nin), mean(sout, nout)))
    }
}

/// GradCAM of the risk output with respect to the last conv block.
pub fn gradcam(weights: &ModelWeights, image: &EnvImage, eye_var_norm: f64) -> Result<Heatmap> {
    if !(0.0..=1.0).contains(&eye_var_norm) {
        return Err(Error::OutOfRange(alloc::format!(
            "normalized eye variance {eye_var_norm}"
        )));
    }
    let images = weights.image_batch(&[image])?;
    let eye = Tensor::from_vec(&[1, 1], vec![eye_var_norm])?;
    let cache = weights.forward_batch(&images, &eye, Mode::Infer, &mut SplitMix64::new(0))?;
    let grad = weights.feature_map_gradient(&cache)?;
    let &[_, c, h, w] = cache.feature_map.shape() else {
        return Err(Error::InvalidShape(cache.feature_map.shape().to_vec()));
    };
    let plane = h * w;
    let mut raw = vec![0.0; plane];
    for k in 0..c {
        let g = &grad.data()[k * plane..][..plane];
        let a = &cache.feature_map.data()[k * plane..][..plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        for (r, &v) in raw.iter_mut().zip(a) {
            *r += alpha * v;
        }
    }
    for r in &mut raw {
        *r = r.max(0.0);
    }
    let mut grid = upsample_bilinear(&raw, w, h, image.width, image.height);
    let max = grid.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut grid {
            *v = (*v / max).min(1.0);
        }
    }
    Ok(Heatmap {
        width: image.width,
        height: image.height,
        grid,
        source_layer: GRADCAM_LAYER.to_string(),
    })
}

/// Bilinear resampling with half-pixel centres and clamped edges.
pub fn upsample_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    assert_eq!(
        src.len(),
        sw * sh,
        "source length differs from its dimensions"
    );
    let axis = |d: usize, dn: usize, sn: usize| {
        let pos = ((d as f64 + 0.5) * sn as f64 / dn as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(sn - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, dh, sh);
        for x in 0..dw {
            let (x0, x1, fx) = axis(x, dw, sw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Shapley decomposition of one prediction over brightness and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapAttribution {
    pub phi_brightness: f64,
    pub phi_variance: f64,
    pub base_value: f64,
    pub prediction: f64,
}

/// A function of the two aggregate inputs.
pub trait Scorer {
    fn score(&mut self, brightness: f64, variance: f64) -> Result<f64>;
}

impl<F: FnMut(f64, f64) -> f64> Scorer for F {
    fn score(&mut self, brightness: f64, variance: f64) -> Result<f64> {
        Ok(self(brightness, variance))
    }
}

/// Exact Shapley values by enumerating all four coalitions.
pub fn shap_exact<S: Scorer + ?Sized>(
    f: &mut S,
    instance: (f64, f64),
    baseline: (f64, f64),
) -> Result<ShapAttribution> {
    let (b, v) = instance;
    let (b0, v0) = baseline;
    let full = f.score(b, v)?;
    let base = f.score(b0, v0)?;
    let only_b = f.score(b, v0)?;
    let only_v = f.score(b0, v)?;
    Ok(ShapAttribution {
        phi_brightness: 0.5 * ((full - only_v) + (only_b - base)),
        phi_variance: 0.5 * ((full - only_b) + (only_v - base)),
        base_value: base,
        prediction: full,
    })
}

/// Scores raw `(lux, variance)` through the model on its canonical frame.
/// Image-branch features are cached per lux value, since each Shapley
/// evaluation reuses one of two frames.
pub struct ModelScorer<'a> {
    weights: &'a ModelWeights,
    features: BTreeMap<u64, Vec<f64>>,
}

pub fn model_scorer(weights: &ModelWeights) -> ModelScorer<'_> {
    ModelScorer {
        weights,
        features: BTreeMap::new(),
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&mut self, lux: f64, variance: f64) -> Result<f64> {
        let lux = LuxValue::new(lux)?;
        let var = EyeVariance::new(variance)?;
        let key = lux.get().to_bits();
        if !self.features.contains_key(&key) {
            let image = synth::canonical_image(lux, self.weights.canonical_seed);
            let feats = self.weights.image_features(&image)?;
            self.features.insert(key, feats);
        }
        self.weights
            .score_from_features(&self.features[&key], synth::normalize_variance(var))
    }
}

/// Attributions for every point against the points' mean.
pub fn shap_against_mean<S: Scorer + ?Sized>(
    f: &mut S,
    points: &[(f64, f64)],
) -> Result<Vec<ShapAttribution>> {
    if points.is_empty() {
        return Err(Error::DatasetTooSmall("no points to explain".to_string()));
    }
    let n = points.len() as f64;
    let baseline = (
        points.iter().map(|p| p.0).sum::<f64>() / n,
        points.iter().map(|p| p.1).sum::<f64>() / n,
    );
    points.iter().map(|&p| shap_exact(f, p, baseline)).collect()
}

/// `(mean |φ_brightness|, mean |φ_variance|)`.
pub fn mean_abs(attributions: &[ShapAttribution]) -> (f64, f64) {
    let n = attributions.len().max(1) as f64;
    let sum =
        |g: fn(&ShapAttribution) -> f64| attributions.iter().map(|a| g(a).abs()).sum::<f64>() / n;
    (sum(|a| a.phi_brightness), sum(|a| a.phi_variance))
}

pub fn sample_points(samples: &[Sample]) -> Vec<(f64, f64)> {
    samples
        .iter()
        .map(|s| (s.lux.get(), s.eye_var.get()))
        .collect()
}

/// Mean absolute Shapley values of the model over `samples`, with the
/// samples' mean `(lux, variance)` as baseline.
pub fn mean_abs_shap(weights: &ModelWeights, samples: &[Sample]) -> Result<(f64, f64)> {
    let attributions = shap_against_mean(&mut model_scorer(weights), &sample_points(samples))?;
    Ok(mean_abs(&attributions))
}

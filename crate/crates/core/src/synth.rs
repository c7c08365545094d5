//! Synthetic environment images, eye-movement variance and risk labels.
//!
//! Every random draw comes from one [`SplitMix64`] stream seeded by the
//! dataset seed, so a `(n, seed, config)` triple fully determines a dataset.
//! Generated values are quantized to their on-disk precision (8-bit pixels,
//! six decimal places for scalars) so that a saved dataset reloads bit-exactly.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const IMAGE_SIZE: usize = 128;

pub const LUX_MIN: f64 = 300.0;
pub const LUX_MAX: f64 = 1200.0;
pub const VARIANCE_MIN: f64 = 2.0;
pub const VARIANCE_MAX: f64 = 10.0;

/// Bounds accepted when loading data from outside the generator.
pub const LUX_ACCEPT_MAX: f64 = 20_000.0;
pub const VARIANCE_ACCEPT_MAX: f64 = 100.0;

/// Standard deviation of the noise added to risk labels.
pub const LABEL_NOISE_SIGMA: f64 = 0.05;
pub const BRIGHTNESS_WEIGHT: f64 = 0.6;
pub const VARIANCE_WEIGHT: f64 = 0.4;

const TEXTURE_SIGMA: f64 = 0.02;
const PATCH_BOOST: f64 = 0.25;
/// Semi-axis range of light patches (full axes 8 to 32 px).
const PATCH_SEMI_AXIS: (f64, f64) = (4.0, 16.0);

/// Ambient illuminance in lux.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LuxValue(f64);

impl LuxValue {
    pub fn new(lux: f64) -> Result<Self> {
        if !(0.0..=LUX_ACCEPT_MAX).contains(&lux) {
            return Err(Error::OutOfRange(format!(
                "lux {lux} outside [0, {LUX_ACCEPT_MAX}]"
            )));
        }
        Ok(Self(lux))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Positional variance of gaze, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct EyeVariance(f64);

impl EyeVariance {
    pub fn new(variance: f64) -> Result<Self> {
        if !(0.0..=VARIANCE_ACCEPT_MAX).contains(&variance) {
            return Err(Error::OutOfRange(format!(
                "eye variance {variance} outside [0, {VARIANCE_ACCEPT_MAX}]"
            )));
        }
        Ok(Self(variance))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Grayscale frame with values in [0,1] and a mask of synthesized light patches.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub light_mask: Vec<bool>,
}

impl EnvImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            light_mask: vec![false; width * height],
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn mask_count(&self) -> usize {
        self.light_mask.iter().filter(|&&m| m).count()
    }

    fn map_pixels(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            pixels: self.pixels.iter().map(|&p| f(p).clamp(0.0, 1.0)).collect(),
            light_mask: self.light_mask.clone(),
            ..*self
        }
    }

    /// Rounds every pixel to the nearest multiple of 1/255.
    pub fn quantize(&mut self) {
        for p in &mut self.pixels {
            *p = quantize_pixel(*p);
        }
    }
}

pub fn quantize_pixel(p: f64) -> f64 {
    pixel_to_byte(p) as f64 / 255.0
}

pub fn pixel_to_byte(p: f64) -> u8 {
    libm::round(p.clamp(0.0, 1.0) * 255.0) as u8
}

/// Rounds to six decimal places exactly as the manifest prints and parses them.
pub fn quantize_decimal(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap_or(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: EnvImage,
    pub lux: LuxValue,
    pub eye_var: EyeVariance,
    pub risk_label: f64,
    /// Blur applied during augmentation; 0 when the sample was not blurred.
    pub blur_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub jitter_fraction: f64,
    pub blur_sigma_range: (f64, f64),
    pub blur_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            jitter_fraction: 0.10,
            blur_sigma_range: (0.5, 1.5),
            blur_probability: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No noise, jitter or blur.
    pub fn none() -> Self {
        Self {
            noise_sigma: 0.0,
            jitter_fraction: 0.0,
            blur_sigma_range: (0.0, 0.0),
            blur_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.blur_sigma_range;
        let problem = if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            "noise_sigma must be >= 0"
        } else if !(0.0..1.0).contains(&self.jitter_fraction) {
            "jitter_fraction must lie in [0, 1)"
        } else if !(lo >= 0.0 && hi >= lo) {
            "blur_sigma_range must be non-negative and ordered"
        } else if !(0.0..=1.0).contains(&self.blur_probability) {
            "blur_probability must lie in [0, 1]"
        } else {
            return Ok(());
        };
        Err(Error::InvalidConfig(problem.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
    pub augment_config: AugmentConfig,
    pub split_fraction: f64,
}

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::DatasetTooSmall("dataset has no samples".to_string()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        self.augment_config.validate()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Leading `floor(split_fraction * n)` samples train, the rest validate.
    pub fn split(&self) -> (&[Sample], &[Sample]) {
        let n_train = (self.split_fraction * self.samples.len() as f64) as usize;
        self.samples.split_at(n_train.min(self.samples.len()))
    }
}

/// Maps 300..1200 lux onto [0,1], clamping outside.
pub fn normalize_brightness(lux: LuxValue) -> f64 {
    ((lux.get() - LUX_MIN) / (LUX_MAX - LUX_MIN)).clamp(0.0, 1.0)
}

/// Maps 2..10 px onto [0,1], clamping outside.
pub fn normalize_variance(v: EyeVariance) -> f64 {
    ((v.get() - VARIANCE_MIN) / (VARIANCE_MAX - VARIANCE_MIN)).clamp(0.0, 1.0)
}

/// `clamp(0.6 b + 0.4 v + noise, 0, 1)` on normalized inputs.
pub fn risk_label(b_norm: f64, v_norm: f64, noise: f64) -> f64 {
    (BRIGHTNESS_WEIGHT * b_norm + VARIANCE_WEIGHT * v_norm + noise).clamp(0.0, 1.0)
}

/// Background intensity for a given illuminance.
pub fn background_intensity(lux: LuxValue) -> f64 {
    0.1 + 0.7 * normalize_brightness(lux)
}

/// Whether pixel `(x, y)` lies inside the axis-aligned ellipse centred on the
/// grid corner `(cx, cy)`. Pixel centres sit at half-integer coordinates.
pub fn in_ellipse(x: usize, y: usize, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let dx = (x as f64 + 0.5 - cx) / a;
    let dy = (y as f64 + 0.5 - cy) / b;
    dx * dx + dy * dy <= 1.0
}

/// Renders a frame: uniform background set by `lux`, one to four brighter
/// elliptical light patches, and faint texture noise.
pub fn gen_image(lux: LuxValue, rng: &mut SplitMix64) -> EnvImage {
    let n = IMAGE_SIZE;
    let bg = background_intensity(lux);
    let patch = (bg + PATCH_BOOST).min(1.0);
    let mut img = EnvImage::filled(n, n, bg);

    let patches = 1 + rng.below(4);
    for _ in 0..patches {
        let a = rng.uniform(PATCH_SEMI_AXIS.0, PATCH_SEMI_AXIS.1);
        let b = rng.uniform(PATCH_SEMI_AXIS.0, PATCH_SEMI_AXIS.1);
        let (ra, rb) = (libm::ceil(a) as u64, libm::ceil(b) as u64);
        let cx = (ra + rng.below(n as u64 + 1 - 2 * ra)) as f64;
        let cy = (rb + rng.below(n as u64 + 1 - 2 * rb)) as f64;
        let (x0, x1) = ((cx - a).max(0.0) as usize, ((cx + a) as usize).min(n - 1));
        let (y0, y1) = ((cy - b).max(0.0) as usize, ((cy + b) as usize).min(n - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if in_ellipse(x, y, cx, cy, a, b) {
                    img.pixels[y * n + x] = patch;
                    img.light_mask[y * n + x] = true;
                }
            }
        }
    }

    for p in &mut img.pixels {
        *p = (*p + rng.normal(0.0, TEXTURE_SIGMA)).clamp(0.0, 1.0);
    }
    img
}

/// Adds independent `Normal(0, sigma)` noise to every pixel.
pub fn add_gaussian_noise(img: &EnvImage, sigma: f64, rng: &mut SplitMix64) -> EnvImage {
    img.map_pixels(|p| p + rng.normal(0.0, sigma))
}

/// Scales the whole frame by one factor drawn from `[1 - fraction, 1 + fraction]`.
pub fn jitter_brightness(img: &EnvImage, fraction: f64, rng: &mut SplitMix64) -> EnvImage {
    let factor = rng.uniform(1.0 - fraction, 1.0 + fraction);
    img.map_pixels(|p| p * factor)
}

/// Normalized 1-D Gaussian taps for radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge sampling.
pub fn gaussian_blur(img: &EnvImage, sigma: f64) -> EnvImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let at = |i: isize, len: isize| i.clamp(0, len - 1) as usize;

    let mut horiz = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            horiz[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, t)| t * img.pixels[(y * w) as usize + at(x + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, t)| t * horiz[at(y + k as isize - radius, h) * w as usize + x as usize])
                .sum();
            out.pixels[(y * w + x) as usize] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Generates `n` augmented samples from `seed`.
pub fn gen_dataset(n: usize, seed: u64, config: &AugmentConfig) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::DatasetTooSmall("requested zero samples".to_string()));
    }
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let samples = (0..n).map(|_| gen_sample(config, &mut rng)).collect();
    Ok(Dataset {
        samples,
        seed,
        augment_config: config.clone(),
        split_fraction: DEFAULT_SPLIT_FRACTION,
    })
}

fn gen_sample(config: &AugmentConfig, rng: &mut SplitMix64) -> Sample {
    let lux = LuxValue(quantize_decimal(rng.uniform(LUX_MIN, LUX_MAX)));
    let eye_var = EyeVariance(quantize_decimal(rng.uniform(VARIANCE_MIN, VARIANCE_MAX)));

    let mut image = gen_image(lux, rng);
    image = add_gaussian_noise(&image, config.noise_sigma, rng);
    image = jitter_brightness(&image, config.jitter_fraction, rng);
    let mut blur_sigma = 0.0;
    if rng.next_f64() < config.blur_probability {
        let (lo, hi) = config.blur_sigma_range;
        blur_sigma = quantize_decimal(rng.uniform(lo, hi));
        image = gaussian_blur(&image, blur_sigma);
    }
    image.quantize();

    let noise = rng.normal(0.0, LABEL_NOISE_SIGMA);
    let risk_label = quantize_decimal(risk_label(
        normalize_brightness(lux),
        normalize_variance(eye_var),
        noise,
    ));
    Sample {
        image,
        lux,
        eye_var,
        risk_label,
        blur_sigma,
    }
}

/// Image used when scoring bare `(lux, variance)` inputs: the generator's
/// frame for `seed` with the default sensor noise, quantized like training data.
pub fn canonical_image(lux: LuxValue, seed: u64) -> EnvImage {
    let mut rng = SplitMix64::new(seed);
    let img = gen_image(lux, &mut rng);
    let mut img = add_gaussian_noise(&img, AugmentConfig::default().noise_sigma, &mut rng);
    img.quantize();
    img
}

//! Mini-batch training with early stopping, and evaluation metrics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::mse_loss;
use crate::model::ModelWeights;
use crate::optim::AdamState;
use crate::recommend::score_band;
use crate::rng::SplitMix64;
use crate::synth::{normalize_variance, Dataset, Sample};
use crate::tensor::Tensor;
use crate::Mode;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_max: 100,
            batch_size: 32,
            patience: 10,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    /// Fraction where prediction and label fall on the same side of 0.5.
    pub binary_accuracy: f64,
    /// Fraction where prediction and label share a filter band.
    pub band_accuracy: f64,
}

pub fn metrics_from_predictions(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::DatasetTooSmall(
            "cannot evaluate an empty set".into(),
        ));
    }
    let n = preds.len() as f64;
    let pairs = || preds.iter().zip(labels);
    let mse = pairs().map(|(p, l)| (p - l) * (p - l)).sum::<f64>() / n;
    let binary = pairs()
        .filter(|(p, l)| (**p >= 0.5) == (**l >= 0.5))
        .count();
    let band = pairs()
        .filter(|(p, l)| score_band(**p) == score_band(**l))
        .count();
    Ok(Metrics {
        mse,
        binary_accuracy: binary as f64 / n,
        band_accuracy: band as f64 / n,
    })
}

/// Infer-mode predictions for samples.
pub fn predict_samples(weights: &ModelWeights, samples: &[Sample]) -> Result<Vec<f64>> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let eyes: Vec<f64> = samples
        .iter()
        .map(|s| normalize_variance(s.eye_var))
        .collect();
    weights.infer_many(&images, &eyes)
}

pub fn evaluate(weights: &ModelWeights, samples: &[Sample]) -> Result<Metrics> {
    let preds = predict_samples(weights, samples)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.risk_label).collect();
    metrics_from_predictions(&preds, &labels)
}

fn batch_tensors(weights: &ModelWeights, samples: &[&Sample]) -> Result<(Tensor, Tensor, Tensor)> {
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let images = weights.image_batch(&images)?;
    let n = samples.len();
    let eye = samples
        .iter()
        .map(|s| normalize_variance(s.eye_var))
        .collect();
    let labels = samples.iter().map(|s| s.risk_label).collect();
    Ok((
        images,
        Tensor::from_vec(&[n, 1], eye)?,
        Tensor::from_vec(&[n, 1], labels)?,
    ))
}

/// One Adam step on a batch; returns the batch loss.
pub fn train_step(
    weights: &mut ModelWeights,
    adam: &mut AdamState,
    batch: &[&Sample],
    rng: &mut SplitMix64,
) -> Result<f64> {
    let (images, eye, labels) = batch_tensors(weights, batch)?;
    let cache = weights.forward_batch(&images, &eye, Mode::Train, rng)?;
    weights.commit_batch_stats(&cache);
    let (loss, grad) = mse_loss(&cache.output, &labels)?;
    weights.backward(&cache, &grad, false)?;
    adam.step(
        weights
            .layers_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias]),
    );
    Ok(loss)
}

pub fn train(
    weights: &mut ModelWeights,
    ds: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(weights, ds, config, |_| {})
}

/// Trains on the dataset's train split, validating on the rest after every
/// epoch. Stops once validation loss has not improved for `patience`
/// consecutive epochs and restores the best epoch's weights.
pub fn train_with_progress(
    weights: &mut ModelWeights,
    ds: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    ds.validate()?;
    if config.batch_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "batch size {} is below 2",
            config.batch_size
        )));
    }
    if config.epochs_max == 0 {
        return Err(Error::InvalidConfig("epochs_max must be positive".into()));
    }
    if ds.len() < 2 * config.batch_size {
        return Err(Error::DatasetTooSmall(format!(
            "{} samples for batch size {}",
            ds.len(),
            config.batch_size
        )));
    }
    let (train_set, val_set) = ds.split();
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(Error::DatasetTooSmall(format!(
            "split leaves {} train / {} validation samples",
            train_set.len(),
            val_set.len()
        )));
    }

    let mut adam = AdamState::with_lr(config.learning_rate)?;
    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ModelWeights)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs_max {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(config.batch_size) {
            // batchnorm cannot normalize a single leftover sample
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_step(weights, &mut adam, &batch, &mut rng)? * chunk.len() as f64;
            seen += chunk.len();
        }
        let val = evaluate(weights, val_set)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: val.mse,
            val_accuracy: val.binary_accuracy,
        };
        on_epoch(&stats);
        epochs.push(stats);

        let improved = best.as_ref().is_none_or(|(loss, _, _)| val.mse < *loss);
        if improved {
            best = Some((val.mse, epoch, weights.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let stopped_epoch = epochs.len();
    let (_, best_epoch, best_weights) = best.expect("at least one epoch ran");
    *weights = best_weights;
    // The moments mean nothing without the optimizer's step count, which is dropped here.
    weights.reset_optimizer_state();
    Ok(TrainReport {
        epochs,
        stopped_epoch,
        best_epoch,
    })
}

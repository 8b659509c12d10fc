use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{CnnModel, CnnShape};
use crate::dsp::WaterfallPatch;
use crate::optim::SgdMomentum;
use crate::{Class, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Stop at the end of an epoch once every training patch is classified
    /// correctly.
    pub stop_at_full_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 128,
            learning_rate: 0.001,
            momentum: 0.9,
            seed: 0,
            stop_at_full_accuracy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Summed cross-entropy accumulated over each epoch's batches.
    pub epoch_losses: Vec<f64>,
    pub epochs_run: usize,
    pub train_accuracy: f64,
}

/// Fraction of labeled patches the model classifies correctly.
pub fn accuracy(model: &CnnModel, patches: &[WaterfallPatch]) -> Result<f64> {
    let hits = patches
        .par_iter()
        .map(|p| {
            let probs = model.probabilities(&p.pixels.data)?;
            let pred = if probs[0] > probs[1] { Class::Excavator } else { Class::Other };
            Ok(usize::from(Some(pred) == p.label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / patches.len().max(1) as f64)
}

/// Trains a freshly initialized network on labeled patches.
pub fn train_cnn(patches: &[WaterfallPatch], config: &TrainConfig) -> Result<(CnnModel, TrainReport)> {
    let first = patches
        .first()
        .ok_or_else(|| Error::InsufficientData("no training patches".into()))?;
    let shape = CnnShape::new(first.pixels.rows, first.pixels.cols, super::model::FILTERS);
    let model = CnnModel::init(shape, config.seed)?;
    train_cnn_from(model, patches, config)
}

/// Continues training an existing model, velocity included.
pub fn train_cnn_from(
    mut model: CnnModel,
    patches: &[WaterfallPatch],
    config: &TrainConfig,
) -> Result<(CnnModel, TrainReport)> {
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::InvalidConfig("batch size and epoch count must be positive".into()));
    }
    let opt = SgdMomentum::new(config.learning_rate, config.momentum)?;
    let mut samples: Vec<(&[f64], Class)> = Vec::with_capacity(patches.len());
    let mut seen = [false; 2];
    for p in patches {
        let label = p
            .label
            .ok_or_else(|| Error::InsufficientData("training patch without a label".into()))?;
        if p.pixels.rows != model.shape.in_h || p.pixels.cols != model.shape.in_w {
            return Err(Error::DimensionMismatch {
                expected: model.shape.input_len(),
                actual: p.pixels.data.len(),
            });
        }
        seen[label.index()] = true;
        samples.push((&p.pixels.data, label));
    }
    if !seen.iter().all(|s| *s) {
        return Err(Error::InsufficientData("training needs both classes".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut train_accuracy = 0.0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], Class)> = chunk.iter().map(|&i| samples[i]).collect();
            let (loss, grad) = model.batch_gradient(&batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            opt.step(&mut model.params, &grad, &mut model.velocity)?;
        }
        epoch_losses.push(epoch_loss);
        train_accuracy = accuracy(&model, patches)?;
        if config.stop_at_full_accuracy && train_accuracy == 1.0 {
            break;
        }
    }
    Ok((
        model,
        TrainReport {
            epochs_run: epoch_losses.len(),
            epoch_losses,
            train_accuracy,
        },
    ))
}

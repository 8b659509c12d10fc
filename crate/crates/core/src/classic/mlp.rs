//! Feed-forward network with one tanh hidden layer and a two-way softmax
//! output, trained on the summed cross-entropy with momentum SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::cnn::{cross_entropy, softmax_forward};
use crate::optim::SgdMomentum;
use crate::{Error, Result};

pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 5,
            epochs: 200,
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Parameters are stored flat: input weights `[hidden][inputs]`, hidden
/// biases, output weights `[2][hidden]`, output biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

struct Forward {
    hidden: Vec<f64>,
    probs: [f64; 2],
}

impl MlpModel {
    pub fn param_count(inputs: usize, hidden: usize) -> usize {
        hidden * inputs + hidden + CLASSES * hidden + CLASSES
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Self::param_count(inputs, hidden)];
        let b1 = 1.0 / (inputs as f64).sqrt();
        for w in &mut params[..hidden * inputs] {
            *w = rng.gen_range(-b1..b1);
        }
        let o = hidden * inputs + hidden;
        let b2 = 1.0 / (hidden as f64).sqrt();
        for w in &mut params[o..o + CLASSES * hidden] {
            *w = rng.gen_range(-b2..b2);
        }
        Self {
            inputs,
            hidden,
            params,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + CLASSES * self.hidden;
        (b1, w2, b2)
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let w = &p[h * self.inputs..(h + 1) * self.inputs];
                (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p[o_b1 + h]).tanh()
            })
            .collect();
        let mut logits = [0.0; CLASSES];
        for (k, l) in logits.iter_mut().enumerate() {
            let w = &p[o_w2 + k * self.hidden..o_w2 + (k + 1) * self.hidden];
            *l = w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + p[o_b2 + k];
        }
        let probs = softmax_forward(&logits);
        Forward {
            hidden,
            probs: [probs[0], probs[1]],
        }
    }

    /// Class probabilities, indexed by [`crate::Class::index`].
    pub fn probabilities(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.inputs,
                actual: x.len(),
            });
        }
        Ok(self.forward(x).probs)
    }

    /// Summed cross-entropy over `rows` and its gradient w.r.t. `params`.
    pub fn loss_and_grad(&self, data: &Dataset, rows: &[usize]) -> (f64, Vec<f64>) {
        let (o_b1, o_w2, o_b2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for &i in rows {
            let x = &data.features[i];
            let t = data.indicator(i);
            let f = self.forward(x);
            loss += cross_entropy(&[f.probs.to_vec()], &[t.to_vec()]);
            // Softmax + cross-entropy: dE/dlogit = y - t.
            let dlogit = [f.probs[0] - t[0], f.probs[1] - t[1]];
            let mut dhidden = vec![0.0; self.hidden];
            for k in 0..CLASSES {
                grad[o_b2 + k] += dlogit[k];
                for h in 0..self.hidden {
                    grad[o_w2 + k * self.hidden + h] += dlogit[k] * f.hidden[h];
                    dhidden[h] += dlogit[k] * self.params[o_w2 + k * self.hidden + h];
                }
            }
            for h in 0..self.hidden {
                let dpre = dhidden[h] * (1.0 - f.hidden[h] * f.hidden[h]);
                grad[o_b1 + h] += dpre;
                let row = &mut grad[h * self.inputs..(h + 1) * self.inputs];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += dpre * xv;
                }
            }
        }
        (loss, grad)
    }
}

/// Trains on standardized features; returns the model and per-epoch loss.
pub fn train_mlp(train: &Dataset, config: &MlpConfig) -> Result<(MlpModel, Vec<f64>)> {
    train.require_both_classes()?;
    if config.hidden == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig("hidden units and batch size must be positive".into()));
    }
    let opt = SgdMomentum::new(config.learning_rate, config.momentum)?;
    let mut model = MlpModel::init(train.dims(), config.hidden, config.seed);
    let mut velocity = vec![0.0; model.params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = model.loss_and_grad(train, batch);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            opt.step(&mut model.params, &grad, &mut velocity)?;
        }
        if !model.params.iter().all(|p| p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        history.push(epoch_loss);
    }
    Ok((model, history))
}

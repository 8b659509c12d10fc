use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

/// Per-dimension z-scoring fitted on a training set. Dimensions with zero
/// variance map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and population standard deviation per dimension.
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("cannot standardize an empty dataset".into()));
        }
        let dims = train.dims();
        let n = train.len() as f64;
        let mut mean = vec![0.0; dims];
        for row in &train.features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for row in &train.features {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // Round-off residue on a constant column.
                if sd <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect())
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        let features = data
            .features
            .iter()
            .map(|r| self.apply(r))
            .collect::<Result<_>>()?;
        Dataset::new(features, data.targets.clone())
    }
}

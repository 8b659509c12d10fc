use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureVector;
use crate::{Class, Error, Result};

/// Feature rows with binary targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Class>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<Class>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                actual: targets.len(),
            });
        }
        if let Some(first) = features.first() {
            let dims = first.len();
            if let Some(bad) = features.iter().find(|r| r.len() != dims) {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { features, targets })
    }

    pub fn from_feature_vectors(rows: Vec<(FeatureVector, Class)>) -> Result<Self> {
        let (features, targets) = rows.into_iter().map(|(f, c)| (f.values, c)).unzip();
        Self::new(features, targets)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for t in &self.targets {
            c[t.index()] += 1;
        }
        c
    }

    /// One-hot indicator `t_ij` of sample `i`.
    pub fn indicator(&self, i: usize) -> [f64; 2] {
        let mut t = [0.0; 2];
        t[self.targets[i].index()] = 1.0;
        t
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let c = self.class_counts();
        if c[0] == 0 || c[1] == 0 {
            return Err(Error::InsufficientData(format!(
                "training needs both classes, got {} excavator / {} other",
                c[0], c[1]
            )));
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>, target: Class) {
        self.features.push(row);
        self.targets.push(target);
    }

    /// Stratified shuffle split into train / holdout / test with the given
    /// train and holdout fractions; the test set takes the remainder.
    pub fn split3(&self, train: f64, holdout: f64, seed: u64) -> (Dataset, Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = (Vec::new(), Vec::new(), Vec::new());
        for class in [Class::Excavator, Class::Other] {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.targets[i] == class)
                .collect();
            idx.shuffle(&mut rng);
            let n = idx.len();
            let n_train = (n as f64 * train).round() as usize;
            let n_hold = ((n as f64 * holdout).round() as usize).min(n - n_train);
            parts.0.extend_from_slice(&idx[..n_train]);
            parts.1.extend_from_slice(&idx[n_train..n_train + n_hold]);
            parts.2.extend_from_slice(&idx[n_train + n_hold..]);
        }
        parts.0.shuffle(&mut rng);
        parts.1.shuffle(&mut rng);
        parts.2.shuffle(&mut rng);
        (
            self.subset(&parts.0),
            self.subset(&parts.1),
            self.subset(&parts.2),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_rejected() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![Class::Other; 2]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![]).is_err());
    }

    #[test]
    fn indicator_is_one_hot() {
        let d = Dataset::new(
            vec![vec![0.0], vec![1.0]],
            vec![Class::Excavator, Class::Other],
        )
        .unwrap();
        assert_eq!(d.indicator(0), [1.0, 0.0]);
        assert_eq!(d.indicator(1), [0.0, 1.0]);
    }

    #[test]
    fn split_is_stratified_and_complete() {
        let n = 200;
        let d = Dataset::new(
            (0..n).map(|i| vec![i as f64]).collect(),
            (0..n)
                .map(|i| if i % 4 == 0 { Class::Excavator } else { Class::Other })
                .collect(),
        )
        .unwrap();
        let (a, b, c) = d.split3(0.7, 0.15, 1);
        assert_eq!(a.len() + b.len() + c.len(), n);
        assert_eq!(a.class_counts(), [35, 105]);
        let mut all: Vec<f64> = a
            .features
            .iter()
            .chain(&b.features)
            .chain(&c.features)
            .map(|r| r[0])
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(d.split3(0.7, 0.15, 1), (a, b, c));
    }
}

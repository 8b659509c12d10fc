use serde::{Deserialize, Serialize};

use crate::Class;

/// Classification metrics. `confusion[actual][predicted]`, indices per
/// [`Class::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub confusion: [[usize; 2]; 2],
    /// Fraction of each actual class predicted correctly (NaN-free: 0 when
    /// the class is absent).
    pub per_class_rate: [f64; 2],
}

impl Metrics {
    pub fn class_count(&self, class: Class) -> usize {
        self.confusion[class.index()].iter().sum()
    }
}

pub fn evaluate_predictions(actual: &[Class], predicted: &[Class]) -> Metrics {
    assert_eq!(actual.len(), predicted.len(), "label vectors differ in length");
    let mut confusion = [[0usize; 2]; 2];
    for (a, p) in actual.iter().zip(predicted) {
        confusion[a.index()][p.index()] += 1;
    }
    let total = actual.len();
    let correct = confusion[0][0] + confusion[1][1];
    let rate = |c: usize| {
        let n = confusion[c][0] + confusion[c][1];
        if n == 0 {
            0.0
        } else {
            confusion[c][c] as f64 / n as f64
        }
    };
    Metrics {
        total,
        correct,
        accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        confusion,
        per_class_rate: [rate(0), rate(1)],
    }
}

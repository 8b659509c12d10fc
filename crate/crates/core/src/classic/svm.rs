//! Soft-margin SVM with the inhomogeneous polynomial kernel
//! `K(u, v) = (1 + u.v)^degree`, trained by sequential minimal optimization
//! with second-order working-set selection.
//!
//! The dual is kept in the usual minimization form
//! `min 1/2 a'Qa - e'a` subject to `0 <= a_i <= C`, `y'a = 0`, with
//! `Q_ij = y_i y_j K(x_i, x_j)`. The full gradient `G = Qa - e` is maintained
//! and kernel rows are cached on demand.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Class, Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub degree: u32,
    pub c: f64,
    /// Stop once the maximal KKT violation gap falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Kernel row cache budget.
    pub cache_mb: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            c: 1.0,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
            cache_mb: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub degree: u32,
    pub c: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i` of each support vector, within `[0, C]`.
    pub alphas: Vec<f64>,
    /// `y_i` in {+1 (excavator), -1 (other)}.
    pub labels: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

pub fn poly_kernel(u: &[f64], v: &[f64], degree: u32) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (1.0 + dot).powi(degree as i32)
}

fn sign_label(c: Class) -> f64 {
    match c {
        Class::Excavator => 1.0,
        Class::Other => -1.0,
    }
}

impl SvmModel {
    /// Kernel expansion `sum_i alpha_i y_i K(sv_i, x) + b`; positive means excavator.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(self.alphas.iter().zip(&self.labels))
            .map(|(sv, (a, y))| a * y * poly_kernel(sv, x, self.degree))
            .sum::<f64>()
            + self.bias
    }

    pub fn dims(&self) -> usize {
        self.support_vectors.first().map_or(0, Vec::len)
    }
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    degree: u32,
    capacity: usize,
    rows: HashMap<usize, Arc<Vec<f64>>>,
    order: VecDeque<usize>,
}

impl<'a> KernelRows<'a> {
    /// `Q_i.` row: `y_i y_k K(x_i, x_k)` for all k.
    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        if let Some(r) = self.rows.get(&i) {
            return r.clone();
        }
        let xi = &self.x[i];
        let yi = self.y[i];
        let degree = self.degree;
        let y = &self.y;
        let row: Vec<f64> = self
            .x
            .par_iter()
            .enumerate()
            .map(|(k, xk)| yi * y[k] * poly_kernel(xi, xk, degree))
            .collect();
        let row = Arc::new(row);
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.rows.insert(i, row.clone());
        self.order.push_back(i);
        row
    }
}

/// Trains the SVM on (already standardized) data.
pub fn train_svm(train: &Dataset, config: &SvmConfig) -> Result<SvmModel> {
    train.require_both_classes()?;
    if !(config.c > 0.0) {
        return Err(Error::InvalidConfig("SVM regularization C must be positive".into()));
    }
    let n = train.len();
    let x = &train.features;
    let y: Vec<f64> = train.targets.iter().map(|c| sign_label(*c)).collect();
    let c = config.c;
    let qd: Vec<f64> = x.iter().map(|xi| poly_kernel(xi, xi, config.degree)).collect();
    let row_bytes = (n * 8).max(1);
    let mut cache = KernelRows {
        x,
        y: y.clone(),
        degree: config.degree,
        capacity: ((config.cache_mb << 20) / row_bytes).max(2),
        rows: HashMap::new(),
        order: VecDeque::new(),
    };

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut iterations = 0;
    let mut gap;

    loop {
        // Maximal violating index i over I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && (i_sel == usize::MAX || -y[t] * grad[t] > gmax) {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let qi = if i_sel != usize::MAX {
            Some(cache.row(i_sel))
        } else {
            None
        };
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if let Some(qi) = &qi {
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = qd[i_sel] + qd[t] - 2.0 * y[i_sel] * y[t] * qi[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        gap = gmax - gmin;
        if gap < config.tolerance || j_sel == usize::MAX {
            break;
        }
        if iterations >= config.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                gap,
                tolerance: config.tolerance,
            });
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let qi = qi.expect("row fetched with i");
        let qj = cache.row(j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        grad.par_iter_mut()
            .enumerate()
            .for_each(|(k, g)| *g += qi[k] * dai + qj[k] * daj);
    }

    let bias = -compute_rho(&y, &alpha, &grad, c);
    let mut model = SvmModel {
        degree: config.degree,
        c,
        support_vectors: Vec::new(),
        alphas: Vec::new(),
        labels: Vec::new(),
        bias,
        iterations,
    };
    for k in 0..n {
        if alpha[k] > 0.0 {
            model.support_vectors.push(x[k].clone());
            model.alphas.push(alpha[k]);
            model.labels.push(y[k]);
        }
    }
    Ok(model)
}

fn compute_rho(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[(&[f64], Class)]) -> Dataset {
        Dataset::new(
            rows.iter().map(|(r, _)| r.to_vec()).collect(),
            rows.iter().map(|(_, c)| *c).collect(),
        )
        .unwrap()
    }

    fn expansion(m: &SvmModel, x: &[f64]) -> f64 {
        let mut s = m.bias;
        for k in 0..m.alphas.len() {
            let dot: f64 = m.support_vectors[k].iter().zip(x).map(|(a, b)| a * b).sum();
            s += m.alphas[k] * m.labels[k] * (1.0 + dot).powi(3);
        }
        s
    }

    #[test]
    fn two_points_both_support_vectors() {
        let d = ds(&[(&[1.0, 1.0], Class::Excavator), (&[-1.0, -1.0], Class::Other)]);
        let m = train_svm(&d, &SvmConfig::default()).unwrap();
        assert_eq!(m.support_vectors.len(), 2);
        assert!(m.decision(&[1.0, 1.0]) > 0.0);
        assert!(m.decision(&[-1.0, -1.0]) < 0.0);
    }

    #[test]
    fn xor_is_separated() {
        let d = ds(&[
            (&[1.0, 1.0], Class::Excavator),
            (&[-1.0, -1.0], Class::Excavator),
            (&[1.0, -1.0], Class::Other),
            (&[-1.0, 1.0], Class::Other),
        ]);
        let m = train_svm(&d, &SvmConfig::default()).unwrap();
        for (row, t) in d.features.iter().zip(&d.targets) {
            let f = m.decision(row);
            assert!((f - expansion(&m, row)).abs() < 1e-9);
            assert_eq!(f > 0.0, *t == Class::Excavator, "{row:?} -> {f}");
        }
    }

    #[test]
    fn alphas_within_box_and_balanced() {
        let rows: Vec<(Vec<f64>, Class)> = (0..40)
            .map(|i| {
                let a = i as f64 * 0.37;
                let r = if i % 2 == 0 { 1.0 } else { 2.2 };
                let c = if i % 2 == 0 { Class::Excavator } else { Class::Other };
                (vec![r * a.cos(), r * a.sin()], c)
            })
            .collect();
        let d = Dataset::new(
            rows.iter().map(|r| r.0.clone()).collect(),
            rows.iter().map(|r| r.1).collect(),
        )
        .unwrap();
        let cfg = SvmConfig {
            c: 0.5,
            ..SvmConfig::default()
        };
        let m = train_svm(&d, &cfg).unwrap();
        assert!(m.alphas.iter().all(|a| *a > 0.0 && *a <= 0.5 + 1e-12));
        let balance: f64 = m.alphas.iter().zip(&m.labels).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-9);
    }

    #[test]
    fn duplicated_training_set_keeps_sign_pattern() {
        let base: Vec<(Vec<f64>, Class)> = vec![
            (vec![2.0, 0.5], Class::Excavator),
            (vec![1.5, -0.5], Class::Excavator),
            (vec![2.5, 1.0], Class::Excavator),
            (vec![-2.0, 0.0], Class::Other),
            (vec![-1.5, 1.0], Class::Other),
            (vec![-2.5, -1.0], Class::Other),
        ];
        let single = Dataset::new(
            base.iter().map(|r| r.0.clone()).collect(),
            base.iter().map(|r| r.1).collect(),
        )
        .unwrap();
        let doubled = Dataset::new(
            base.iter().chain(&base).map(|r| r.0.clone()).collect(),
            base.iter().chain(&base).map(|r| r.1).collect(),
        )
        .unwrap();
        let cfg = SvmConfig {
            tolerance: 1e-6,
            ..SvmConfig::default()
        };
        let m1 = train_svm(&single, &cfg).unwrap();
        let m2 = train_svm(&doubled, &cfg).unwrap();
        for gx in -10..=10 {
            for gy in -10..=10 {
                let p = [gx as f64 * 0.3, gy as f64 * 0.3];
                let (a, b) = (m1.decision(&p), m2.decision(&p));
                if a.abs() > 1e-6 {
                    assert_eq!(a > 0.0, b > 0.0, "probe {p:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn single_class_rejected() {
        let d = ds(&[(&[1.0], Class::Other), (&[2.0], Class::Other)]);
        assert!(train_svm(&d, &SvmConfig::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 1.3).sin(), (i as f64).cos()]).collect();
        let targets = (0..30).map(|i| Class::from_index(i % 2)).collect();
        let d = Dataset::new(rows, targets).unwrap();
        let cfg = SvmConfig {
            max_iterations: 1,
            ..SvmConfig::default()
        };
        match train_svm(&d, &cfg) {
            Err(Error::NonConvergence { iterations, gap, .. }) => {
                assert_eq!(iterations, 1);
                assert!(gap >= 1e-3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}

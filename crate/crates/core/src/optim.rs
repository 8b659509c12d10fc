//! Stochastic gradient descent with momentum, shared by the feed-forward
//! network and the CNN.
//!
//! The velocity carries the scaled gradient:
//!
//! ```text
//! v <- gamma * v + alpha * grad
//! theta <- theta - v
//! ```

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
        })
    }

    pub fn step(&self, params: &mut [f64], grads: &[f64], velocity: &mut [f64]) -> Result<()> {
        sgd_momentum_step(params, grads, velocity, self.learning_rate, self.momentum)
    }
}

/// One momentum update: the velocity is refreshed first, then subtracted.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if velocity.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: velocity.len(),
        });
    }
    for ((theta, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = gamma * *v + alpha * g;
        *theta -= *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_momentum_is_plain_descent() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_momentum_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, -2.0 + 0.1]);
    }

    #[test]
    fn two_hand_iterated_steps() {
        let opt = SgdMomentum::new(0.001, 0.9).unwrap();
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        opt.step(&mut p, &[1.0], &mut v).unwrap();
        assert_eq!(p[0], -0.001);
        opt.step(&mut p, &[1.0], &mut v).unwrap();
        // Same operations by hand, in the same order.
        let v1: f64 = 0.9 * 0.0 + 0.001 * 1.0;
        let v2: f64 = 0.9 * v1 + 0.001 * 1.0;
        assert_eq!(p[0], (0.0 - v1) - v2);
        // The decimal value is not representable; binary64 lands one ulp off.
        assert!((p[0] - -0.0029).abs() <= f64::EPSILON * 0.0029);
    }

    #[test]
    fn zero_gradient_zero_velocity_is_fixed_point() {
        let mut p = vec![0.3, 4.0];
        let mut v = vec![0.0; 2];
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.01, 0.9).unwrap();
        assert_eq!(p, vec![0.3, 4.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        assert!(sgd_momentum_step(&mut p, &[1.0], &mut v, 0.1, 0.5).is_err());
        let mut v2 = vec![0.0; 2];
        assert!(sgd_momentum_step(&mut p, &[1.0; 3], &mut v2, 0.1, 0.5).is_err());
        assert!(SgdMomentum::new(0.0, 0.5).is_err());
        assert!(SgdMomentum::new(0.1, 1.0).is_err());
    }
}

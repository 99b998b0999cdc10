//! Per-step losses that read only the model output at that step.

use crate::numeric::{RealVector, Rng};

/// A loss `L(t)` that depends only on the output emitted at step `t`.
pub trait StepLoss {
    fn value(&self, t: usize, output: &[f64]) -> f64;
    /// `∂L(t)/∂output(t)`.
    fn grad(&self, t: usize, output: &[f64]) -> RealVector;
}

/// `L(t) = ½‖y(t) − target(t)‖²`, scaled per step by `weights[t]`.
#[derive(Clone, Debug)]
pub struct SquaredError {
    pub targets: Vec<RealVector>,
    pub weights: Vec<f64>,
}

impl SquaredError {
    pub fn new(targets: Vec<RealVector>) -> Self {
        let weights = vec![1.0; targets.len()];
        SquaredError { targets, weights }
    }

    /// Random targets in `[-1, 1]` with random nonnegative step weights
    /// (some steps carry no loss at all).
    pub fn random(rng: &mut Rng, steps: usize, dim: usize) -> Self {
        let targets = (0..steps).map(|_| RealVector::from_fn(dim, |_| rng.uniform(-1.0, 1.0))).collect();
        let weights = (0..steps).map(|_| if rng.bernoulli(0.2) { 0.0 } else { rng.uniform(0.5, 1.5) }).collect();
        SquaredError { targets, weights }
    }

    pub fn total<'a>(&self, outputs: impl IntoIterator<Item = &'a [f64]>) -> f64 {
        outputs.into_iter().enumerate().map(|(t, y)| self.value(t, y)).sum()
    }
}

impl StepLoss for SquaredError {
    fn value(&self, t: usize, output: &[f64]) -> f64 {
        let target = &self.targets[t];
        0.5 * self.weights[t] * output.iter().zip(target.iter()).map(|(y, g)| (y - g) * (y - g)).sum::<f64>()
    }

    fn grad(&self, t: usize, output: &[f64]) -> RealVector {
        let target = &self.targets[t];
        let w = self.weights[t];
        RealVector::from_fn(output.len(), |i| w * (output[i] - target[i]))
    }
}

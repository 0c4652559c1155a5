//! Reference predictors: naïve delayed predictor, frozen offline ridge
//! regression, and the small-angle linearized pendulum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{fit_local_model, Sample};

/// Predicts the next target as the last observed one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NaivePredictor {
    prev_y: Option<f64>,
}

impl NaivePredictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peek(&self) -> Option<f64> {
        self.prev_y
    }

    /// Returns the current prediction, then stores `y`.
    pub fn step(&mut self, y: f64) -> Option<f64> {
        self.prev_y.replace(y)
    }
}

/// Ridge regression fitted once on a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRidge {
    /// Slopes followed by the bias.
    pub weights: Vec<f64>,
    pub lambda: f64,
}

impl OfflineRidge {
    pub fn fit(samples: &[Sample], lambda: f64) -> Result<Self> {
        let m = fit_local_model(samples, lambda)?;
        Ok(Self {
            weights: m.weights,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        Ok(self.weights[n]
            + self.weights[..n]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>())
    }
}

/// `-(g/rod)·θ`, the pendulum linearized around the downward equilibrium.
pub fn linearized_pendulum_accel(theta: f64, g: f64, rod: f64) -> Result<f64> {
    if !(rod > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rod length must be positive, got {rod}"
        )));
    }
    Ok(-(g / rod) * theta)
}

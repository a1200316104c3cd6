use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How the cross-moment accumulator `D_i` treats the compensation tensor
/// under partial observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// `D_i += (B - E - O)_(i) R_i`: the dictionary fits the compensated data.
    #[default]
    Compensated,
    /// `D_i += (B - E)_(i) R_i`: unobserved entries enter as zeros.
    Uncompensated,
}

/// Hyperparameters of a streaming recovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dictionary width `r`, shared by every mode.
    pub rank: usize,
    /// Ridge weight on dictionaries and coefficients.
    pub lambda1: f64,
    /// Sparsity scale; `lambda2 = alpha / sqrt(ln(I_max^2))` unless overridden.
    pub alpha: f64,
    /// Explicit fiber-sparsity weight, bypassing the `alpha` rule.
    pub lambda2: Option<f64>,
    /// Relative tolerance of the inner alternating minimisation.
    pub epsilon: f64,
    pub max_inner_iters: usize,
    /// Extent of the last (time) mode per minibatch.
    pub minibatch_extent: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Mode whose fibers carry the outliers.
    pub outlier_mode: usize,
    pub accumulation: Accumulation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rank: 3,
            lambda1: 0.01,
            alpha: 3.0,
            lambda2: None,
            epsilon: 1e-4,
            max_inner_iters: 100,
            minibatch_extent: 1,
            epochs: 1,
            seed: 0,
            outlier_mode: 0,
            accumulation: Accumulation::Compensated,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("rank must be at least 1"));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("alpha", self.alpha),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(l2) = self.lambda2 {
            if !(l2.is_finite() && l2 > 0.0) {
                return Err(invalid(format!("lambda2 must be positive, got {l2}")));
            }
        }
        if self.max_inner_iters == 0 {
            return Err(invalid("max_inner_iters must be at least 1"));
        }
        if self.minibatch_extent == 0 || self.epochs == 0 {
            return Err(invalid("minibatch extent and epochs must be at least 1"));
        }
        Ok(())
    }
}

/// `alpha / sqrt(ln(I_m * I_m))` with `I_m` the largest extent, or the
/// configured override.
pub fn lambda2_from(config: &RunConfig, minibatch_shape: &[usize]) -> Result<f64> {
    if let Some(l2) = config.lambda2 {
        return Ok(l2);
    }
    let largest = minibatch_shape.iter().copied().max().unwrap_or(0);
    if largest < 2 {
        return Err(invalid(format!(
            "lambda2 rule needs an extent of at least 2, shape is {minibatch_shape:?}"
        )));
    }
    let im = largest as f64;
    Ok(config.alpha / (im * im).ln().sqrt())
}

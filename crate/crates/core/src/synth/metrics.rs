use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::generate::{fiber_offsets, GroundTruth};
use crate::error::{invalid, Result};
use crate::tensor::DenseTensor;

pub const DEFAULT_BURN_IN: usize = 10;

/// Streaming form of [`relative_error`]: push minibatches in order.
#[derive(Debug, Clone, Default)]
pub struct ErrorAccumulator {
    burn_in: usize,
    seen: usize,
    err_sq: f64,
    truth_sq: f64,
}

impl ErrorAccumulator {
    pub fn new(burn_in: usize) -> Self {
        Self {
            burn_in,
            ..Default::default()
        }
    }

    pub fn push(&mut self, x_hat: &DenseTensor, truth: &GroundTruth, flags: &BTreeSet<usize>) -> Result<()> {
        x_hat.check_same_shape(truth.clean.shape())?;
        self.seen += 1;
        if self.seen <= self.burn_in {
            return Ok(());
        }
        let shape = x_hat.shape();
        let mut zeroed = vec![false; x_hat.len()];
        for &j in flags {
            for k in fiber_offsets(shape, truth.fiber_mode, j) {
                zeroed[k] = true;
            }
        }
        for ((&x, &t), &z) in x_hat.data().iter().zip(truth.clean.data()).zip(&zeroed) {
            let est = if z { 0.0 } else { x };
            self.err_sq += (t - est) * (t - est);
            self.truth_sq += t * t;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<f64> {
        if self.truth_sq == 0.0 {
            return Err(invalid("relative error undefined: ground truth is zero after burn-in"));
        }
        Ok((self.err_sq / self.truth_sq).sqrt())
    }
}

/// `‖X₀ − X̂‖_F / ‖X₀‖_F` over the minibatches after `burn_in`, with every
/// flagged fiber of `X̂` set to zero.
pub fn relative_error(
    x_hats: &[DenseTensor],
    truths: &[GroundTruth],
    flags: &[BTreeSet<usize>],
    burn_in: usize,
) -> Result<f64> {
    if x_hats.len() != truths.len() || flags.len() != truths.len() {
        return Err(invalid("estimate, truth and flag sequences must align"));
    }
    let mut acc = ErrorAccumulator::new(burn_in);
    for ((x, t), f) in x_hats.iter().zip(truths).zip(flags) {
        acc.push(x, t, f)?;
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Fiber detection counts over (minibatch, fiber) pairs.
#[derive(Debug, Clone, Default)]
pub struct DetectionAccumulator {
    burn_in: usize,
    seen: usize,
    true_pos: usize,
    false_pos: usize,
    false_neg: usize,
}

impl DetectionAccumulator {
    pub fn new(burn_in: usize) -> Self {
        Self {
            burn_in,
            ..Default::default()
        }
    }

    pub fn push(&mut self, flags: &BTreeSet<usize>, truth: &BTreeSet<usize>) {
        self.seen += 1;
        if self.seen <= self.burn_in {
            return;
        }
        let hits = flags.intersection(truth).count();
        self.true_pos += hits;
        self.false_pos += flags.len() - hits;
        self.false_neg += truth.len() - hits;
    }

    pub fn finish(&self) -> Detection {
        let (tp, fp, fn_) = (self.true_pos as f64, self.false_pos as f64, self.false_neg as f64);
        if tp + fp + fn_ == 0.0 {
            return Detection {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 1.0 };
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        Detection { precision, recall, f1 }
    }
}

/// Precision, recall and F1 of the flagged fibers after `burn_in`.
pub fn f1_outliers(flags: &[BTreeSet<usize>], truths: &[GroundTruth], burn_in: usize) -> Result<Detection> {
    if flags.len() != truths.len() {
        return Err(invalid("flag and truth sequences must align"));
    }
    let mut acc = DetectionAccumulator::new(burn_in);
    for (f, t) in flags.iter().zip(truths) {
        acc.push(f, &t.corrupted_fibers);
    }
    Ok(acc.finish())
}

/// Summary of one run over a stream with known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub relative_error: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss_trace: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    /// Largest serialised dictionary state seen during the run, in bytes.
    pub peak_state_bytes: usize,
}

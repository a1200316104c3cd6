use super::config::{lambda2_from, RunConfig};
use super::state::DictionaryState;
use super::updates::{compensate, lowrank_sum, minibatch_objective, shrink_residual, solve_coefficients};
use crate::error::{invalid, Result};
use crate::tensor::{frob_norm, DenseTensor, Matrix, ObservationMask};

/// Fixed parameters of one inner solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
    pub max_inner_iters: usize,
    pub outlier_mode: usize,
    /// Record the objective after initialisation and after every iteration.
    pub record_objective: bool,
}

impl InnerParams {
    pub fn from_config(config: &RunConfig, minibatch_shape: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lambda1: config.lambda1,
            lambda2: lambda2_from(config, minibatch_shape)?,
            epsilon: config.epsilon,
            max_inner_iters: config.max_inner_iters,
            outlier_mode: config.outlier_mode,
            record_objective: false,
        })
    }
}

/// Coefficients, outliers and compensation for one minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchSolution {
    pub coeffs: Vec<Matrix>,
    pub outliers: DenseTensor,
    pub compensation: DenseTensor,
    pub iterations: usize,
    pub converged: bool,
    /// Objective values, populated only when `record_objective` is set.
    pub objective_trace: Vec<f64>,
}

/// Alternates E, then every R_i, then O, starting from zero, until the
/// largest relative change of any R_i or of E drops to `epsilon` or the
/// iteration budget runs out.
pub fn solve_minibatch(
    state: &DictionaryState,
    b: &DenseTensor,
    mask: &ObservationMask,
    config: &RunConfig,
) -> Result<MinibatchSolution> {
    let params = InnerParams::from_config(config, state.minibatch_shape())?;
    solve_with(state.dictionaries(), b, mask, &params)
}

pub fn solve_with(
    dicts: &[Matrix],
    b: &DenseTensor,
    mask: &ObservationMask,
    params: &InnerParams,
) -> Result<MinibatchSolution> {
    let shape = b.shape().to_vec();
    b.check_same_shape(mask.shape())?;
    if dicts.len() != shape.len() {
        return Err(invalid("one dictionary per mode"));
    }
    if params.outlier_mode >= shape.len() {
        return Err(invalid(format!(
            "outlier mode {} out of range for order {}",
            params.outlier_mode,
            shape.len()
        )));
    }
    let partial = !mask.is_full();
    let masked;
    let b = if partial {
        masked = mask.apply(b)?;
        &masked
    } else {
        b
    };

    let mut coeffs: Vec<Matrix> = dicts
        .iter()
        .enumerate()
        .map(|(mode, l)| Matrix::zeros(b.len() / shape[mode], l.ncols()))
        .collect();
    let mut outliers = DenseTensor::zeros(&shape)?;
    let mut compensation = DenseTensor::zeros(&shape)?;
    let mut trace = Vec::new();

    let b_norm = frob_norm(b);
    if b_norm == 0.0 {
        return Ok(MinibatchSolution {
            coeffs,
            outliers,
            compensation,
            iterations: 0,
            converged: true,
            objective_trace: trace,
        });
    }

    let objective = |coeffs: &[Matrix], e: &DenseTensor, o: &DenseTensor| {
        minibatch_objective(
            dicts,
            coeffs,
            b,
            e,
            partial.then_some(o),
            params.lambda1,
            params.lambda2,
            params.outlier_mode,
        )
    };
    if params.record_objective {
        trace.push(objective(&coeffs, &outliers, &compensation)?);
    }

    let mut sum = DenseTensor::zeros(&shape)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_inner_iters {
        iterations += 1;
        let o = partial.then_some(&compensation);

        let new_e = shrink_residual(b, o, &sum, params.lambda2, params.outlier_mode)?;

        let mut resid = b.sub(&new_e)?;
        if let Some(o) = o {
            resid = resid.sub(o)?;
        }
        let new_coeffs = dicts
            .iter()
            .enumerate()
            .map(|(mode, l)| solve_coefficients(&resid, mode, l, params.lambda1))
            .collect::<Result<Vec<_>>>()?;

        sum = lowrank_sum(dicts, &new_coeffs, &shape)?;
        if partial {
            compensation = compensate(b, &new_e, &sum, mask)?;
        }

        let coeff_change = coeffs
            .iter()
            .zip(&new_coeffs)
            .map(|(old, new)| (old - new).norm())
            .fold(0.0, f64::max);
        let outlier_change = frob_norm(&outliers.sub(&new_e)?);
        coeffs = new_coeffs;
        outliers = new_e;

        if params.record_objective {
            trace.push(objective(&coeffs, &outliers, &compensation)?);
        }
        if coeff_change.max(outlier_change) / b_norm <= params.epsilon {
            converged = true;
            break;
        }
    }

    Ok(MinibatchSolution {
        coeffs,
        outliers,
        compensation,
        iterations,
        converged,
        objective_trace: trace,
    })
}

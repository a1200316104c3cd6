//! Closed-form block updates of the per-minibatch problem
//!
//! ```text
//! min_{R, E, O}  Σ_i ½‖fold_i(L_i R_iᵀ) + E + O − B‖²_F + (λ1/2) Σ_i ‖R_i‖²_F + λ2 ‖E_(m)‖_{2,1}
//!   s.t. O = 0 on observed entries
//! ```
//!
//! with the dictionaries `L_i` held fixed. Each update minimises the
//! objective exactly over its own block.

use std::collections::BTreeSet;

use crate::error::{invalid, Error, Result};
use crate::tensor::{
    fiber_norms, fold_matmul_add, frob_norm, scale_fibers, unfold_t_matmul, DenseTensor, Matrix,
    ObservationMask,
};

fn check_factors(dicts: &[Matrix], coeffs: &[Matrix], shape: &[usize]) -> Result<()> {
    if dicts.len() != shape.len() || coeffs.len() != shape.len() {
        return Err(invalid(format!(
            "{} dictionaries and {} coefficient matrices for an order-{} tensor",
            dicts.len(),
            coeffs.len(),
            shape.len()
        )));
    }
    Ok(())
}

/// `Σ_i fold_i(L_i R_iᵀ)`.
pub(crate) fn lowrank_sum(dicts: &[Matrix], coeffs: &[Matrix], shape: &[usize]) -> Result<DenseTensor> {
    check_factors(dicts, coeffs, shape)?;
    let mut sum = DenseTensor::zeros(shape)?;
    for (mode, (l, r)) in dicts.iter().zip(coeffs).enumerate() {
        fold_matmul_add(&mut sum, l, r, mode, 1.0)?;
    }
    Ok(sum)
}

/// Ridge-regularised coefficients per mode:
/// `R_i = (B − E − O)_(i)ᵀ L_i (L_iᵀ L_i + λ1 I)⁻¹`, via Cholesky.
pub fn update_r(
    dicts: &[Matrix],
    b: &DenseTensor,
    e: &DenseTensor,
    o: Option<&DenseTensor>,
    lambda1: f64,
) -> Result<Vec<Matrix>> {
    if !(lambda1 > 0.0) {
        return Err(invalid("lambda1 must be positive"));
    }
    if dicts.len() != b.order() {
        return Err(invalid("one dictionary per mode"));
    }
    let mut resid = b.sub(e)?;
    if let Some(o) = o {
        resid = resid.sub(o)?;
    }
    dicts
        .iter()
        .enumerate()
        .map(|(mode, l)| solve_coefficients(&resid, mode, l, lambda1))
        .collect()
}

pub(crate) fn solve_coefficients(
    resid: &DenseTensor,
    mode: usize,
    l: &Matrix,
    lambda1: f64,
) -> Result<Matrix> {
    let proj = unfold_t_matmul(resid, mode, l)?;
    let mut gram = l.tr_mul(l);
    for k in 0..gram.nrows() {
        gram[(k, k)] += lambda1;
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::NonFinite("coefficient normal equations"))?;
    Ok(chol.solve(&proj.transpose()).transpose())
}

/// Column shrinkage of the mode-averaged residual
/// `C = B − O − (1/N) Σ_i fold_i(L_i R_iᵀ)`:
/// each mode-`outlier_mode` fiber `c_j` becomes `c_j · max(0, 1 − λ2 / (N‖c_j‖))`.
pub fn update_e(
    dicts: &[Matrix],
    coeffs: &[Matrix],
    b: &DenseTensor,
    o: Option<&DenseTensor>,
    lambda2: f64,
    outlier_mode: usize,
) -> Result<DenseTensor> {
    if !(lambda2 > 0.0) {
        return Err(invalid("lambda2 must be positive"));
    }
    let sum = lowrank_sum(dicts, coeffs, b.shape())?;
    shrink_residual(b, o, &sum, lambda2, outlier_mode)
}

pub(crate) fn shrink_residual(
    b: &DenseTensor,
    o: Option<&DenseTensor>,
    sum: &DenseTensor,
    lambda2: f64,
    outlier_mode: usize,
) -> Result<DenseTensor> {
    let n = b.order() as f64;
    let mut c = b.clone();
    {
        let cd = c.data_mut();
        for (v, s) in cd.iter_mut().zip(sum.data()) {
            *v -= s / n;
        }
        if let Some(o) = o {
            o.check_same_shape(b.shape())?;
            for (v, ov) in cd.iter_mut().zip(o.data()) {
                *v -= ov;
            }
        }
    }
    let threshold = lambda2 / n;
    let factors: Vec<f64> = fiber_norms(&c, outlier_mode)?
        .into_iter()
        .map(|norm| {
            if norm > 0.0 {
                (1.0 - threshold / norm).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    scale_fibers(&mut c, outlier_mode, &factors)?;
    Ok(c)
}

/// Compensation on unobserved entries: `O = B − E − (1/N) Σ_i fold_i(L_i R_iᵀ)`
/// off the mask, exactly zero on it.
pub fn update_o(
    dicts: &[Matrix],
    coeffs: &[Matrix],
    b: &DenseTensor,
    e: &DenseTensor,
    mask: &ObservationMask,
) -> Result<DenseTensor> {
    let sum = lowrank_sum(dicts, coeffs, b.shape())?;
    compensate(b, e, &sum, mask)
}

pub(crate) fn compensate(
    b: &DenseTensor,
    e: &DenseTensor,
    sum: &DenseTensor,
    mask: &ObservationMask,
) -> Result<DenseTensor> {
    b.check_same_shape(mask.shape())?;
    b.check_same_shape(e.shape())?;
    let n = b.order() as f64;
    let mut o = DenseTensor::zeros(b.shape())?;
    let od = o.data_mut();
    for (k, &seen) in mask.bits().iter().enumerate() {
        if !seen {
            od[k] = b.data()[k] - e.data()[k] - sum.data()[k] / n;
        }
    }
    Ok(o)
}

/// `(1/N) Σ_i fold_i(L_i R_iᵀ)`.
pub fn reconstruct_lowrank(dicts: &[Matrix], coeffs: &[Matrix], shape: &[usize]) -> Result<DenseTensor> {
    let sum = lowrank_sum(dicts, coeffs, shape)?;
    Ok(sum.scaled(1.0 / shape.len() as f64))
}

/// Unfolding columns of `e` (along `outlier_mode`) whose norm exceeds `tol`.
/// The default tolerance is `1e-12 · ‖E‖_F`.
pub fn flag_outlier_fibers(e: &DenseTensor, outlier_mode: usize, tol: Option<f64>) -> Result<BTreeSet<usize>> {
    let tol = tol.unwrap_or(1e-12 * frob_norm(e));
    if tol < 0.0 {
        return Err(invalid("flag tolerance must be non-negative"));
    }
    Ok(fiber_norms(e, outlier_mode)?
        .into_iter()
        .enumerate()
        .filter(|(_, n)| *n > tol)
        .map(|(j, _)| j)
        .collect())
}

/// Value of the per-minibatch objective at `(R, E, O)`.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_objective(
    dicts: &[Matrix],
    coeffs: &[Matrix],
    b: &DenseTensor,
    e: &DenseTensor,
    o: Option<&DenseTensor>,
    lambda1: f64,
    lambda2: f64,
    outlier_mode: usize,
) -> Result<f64> {
    check_factors(dicts, coeffs, b.shape())?;
    let mut base = e.sub(b)?;
    if let Some(o) = o {
        base = base.add(o)?;
    }
    let mut total = 0.0;
    for (mode, (l, r)) in dicts.iter().zip(coeffs).enumerate() {
        let mut resid = base.clone();
        fold_matmul_add(&mut resid, l, r, mode, 1.0)?;
        let fit = frob_norm(&resid);
        total += 0.5 * fit * fit + 0.5 * lambda1 * r.norm_squared();
    }
    total += lambda2 * fiber_norms(e, outlier_mode)?.iter().sum::<f64>();
    Ok(total)
}

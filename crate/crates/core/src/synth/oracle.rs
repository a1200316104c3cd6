//! Brute-force references for the engine's closed forms. Nothing here is used
//! by the engine itself; everything works on explicit unfoldings.

use crate::error::{invalid, Error, Result};
use crate::tensor::{fold, unfold, DenseTensor, Matrix, ObservationMask};

const MAX_JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// `rows x k` with `k = min(rows, cols)`.
    pub u: Matrix,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// `cols x k`.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let s = Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.singular_values));
        &self.u * s * self.v.transpose()
    }
}

/// Thin SVD by one-sided Jacobi rotations.
pub fn oracle_svd(m: &Matrix) -> Result<Svd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle_svd input"));
    }
    if m.nrows() < m.ncols() {
        let t = oracle_svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut v = Matrix::identity(cols, cols);
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::OracleDiverged(format!(
            "Jacobi SVD did not converge in {MAX_JACOBI_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<(f64, usize)> = (0..cols).map(|j| (a.column(j).norm(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut u = Matrix::zeros(rows, cols);
    let mut vs = Matrix::zeros(cols, cols);
    let mut singular_values = Vec::with_capacity(cols);
    for (k, &(sigma, j)) in order.iter().enumerate() {
        if sigma > 0.0 {
            u.set_column(k, &(a.column(j) / sigma));
        }
        vs.set_column(k, &v.column(j));
        singular_values.push(sigma);
    }
    Ok(Svd {
        u,
        singular_values,
        v: vs,
    })
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(oracle_svd(m)?.singular_values.iter().sum())
}

/// `(U Σ^½, V Σ^½)`: the factorisation attaining the variational bound.
pub fn svd_split(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let svd = oracle_svd(m)?;
    let mut l = svd.u;
    let mut r = svd.v;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let root = s.sqrt();
        l.column_mut(k).scale_mut(root);
        r.column_mut(k).scale_mut(root);
    }
    Ok((l, r))
}

/// One minibatch objective with every block but one held fixed.
#[derive(Debug, Clone, Copy)]
pub struct BlockProblem<'a> {
    pub dicts: &'a [Matrix],
    pub coeffs: &'a [Matrix],
    pub b: &'a DenseTensor,
    pub outliers: &'a DenseTensor,
    /// Present under partial observation.
    pub compensation: Option<&'a DenseTensor>,
    pub mask: Option<&'a ObservationMask>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub outlier_mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Coefficients(usize),
    Outliers,
    Compensation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Coefficients(Matrix),
    Tensor(DenseTensor),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentBudget {
    pub max_steps: usize,
    pub gradient_tol: f64,
    pub objective_tol: f64,
}

impl Default for DescentBudget {
    fn default() -> Self {
        Self {
            max_steps: 2_000_000,
            gradient_tol: 1e-11,
            objective_tol: 1e-12,
        }
    }
}

fn add_all(terms: &[&DenseTensor], signs: &[f64]) -> Result<DenseTensor> {
    let mut out = DenseTensor::zeros(terms[0].shape())?;
    for (t, &s) in terms.iter().zip(signs) {
        out = out.add(&t.scaled(s))?;
    }
    Ok(out)
}

impl BlockProblem<'_> {
    fn order(&self) -> usize {
        self.b.order()
    }

    fn compensation_or_zero(&self) -> Result<DenseTensor> {
        match self.compensation {
            Some(o) => Ok(o.clone()),
            None => DenseTensor::zeros(self.b.shape()),
        }
    }

    fn lowrank_term(&self, mode: usize, r: &Matrix) -> Result<DenseTensor> {
        fold(&(&self.dicts[mode] * r.transpose()), mode, self.b.shape())
    }

    /// Objective computed term by term from explicit unfoldings.
    pub fn objective(&self) -> Result<f64> {
        self.objective_at(self.coeffs, self.outliers, &self.compensation_or_zero()?)
    }

    fn objective_at(&self, coeffs: &[Matrix], e: &DenseTensor, o: &DenseTensor) -> Result<f64> {
        let mut total = 0.0;
        for mode in 0..self.order() {
            let f = self.lowrank_term(mode, &coeffs[mode])?;
            let resid = add_all(&[&f, e, o, self.b], &[1.0, 1.0, 1.0, -1.0])?;
            total += 0.5 * resid.data().iter().map(|v| v * v).sum::<f64>();
            total += 0.5 * self.lambda1 * coeffs[mode].iter().map(|v| v * v).sum::<f64>();
        }
        let em = unfold(e, self.outlier_mode)?;
        total += self.lambda2 * em.column_iter().map(|c| c.norm()).sum::<f64>();
        Ok(total)
    }

    fn lowrank_total(&self) -> Result<DenseTensor> {
        let mut s = DenseTensor::zeros(self.b.shape())?;
        for mode in 0..self.order() {
            s = s.add(&self.lowrank_term(mode, &self.coeffs[mode])?)?;
        }
        Ok(s)
    }
}

fn exhausted(what: &str, steps: usize) -> Error {
    Error::OracleDiverged(format!("{what} block did not converge in {steps} steps"))
}

/// Minimises the objective over one block with the rest fixed, by plain
/// gradient descent (coefficients, compensation) or proximal gradient
/// (outliers).
pub fn oracle_descent(problem: &BlockProblem<'_>, block: Block, budget: &DescentBudget) -> Result<BlockValue> {
    let n = problem.order() as f64;
    match block {
        Block::Coefficients(mode) => {
            if mode >= problem.order() {
                return Err(invalid(format!("mode {mode} out of range")));
            }
            let o = problem.compensation_or_zero()?;
            let target = unfold(&add_all(&[problem.b, problem.outliers, &o], &[1.0, -1.0, -1.0])?, mode)?;
            let l = &problem.dicts[mode];
            let step = 1.0 / (l.norm_squared() + problem.lambda1);
            let scale = (target.transpose() * l).norm().max(1.0);
            let mut r = Matrix::zeros(target.ncols(), l.ncols());
            for _ in 0..budget.max_steps {
                let grad = (l * r.transpose() - &target).transpose() * l + &r * problem.lambda1;
                if grad.norm() < budget.gradient_tol * scale {
                    return Ok(BlockValue::Coefficients(r));
                }
                r -= grad * step;
            }
            Err(exhausted("coefficient", budget.max_steps))
        }
        Block::Outliers => {
            let o = problem.compensation_or_zero()?;
            let s = problem.lowrank_total()?;
            let step = 0.5 / n;
            let mut e = DenseTensor::zeros(problem.b.shape())?;
            let mut prev = problem.objective_at(problem.coeffs, &e, &o)?;
            for _ in 0..budget.max_steps {
                // gradient of the smooth part: N E + S + N (O − B)
                let grad = add_all(&[&e, &s, &o, problem.b], &[n, 1.0, n, -n])?;
                let moved = e.sub(&grad.scaled(step))?;
                let mut m = unfold(&moved, problem.outlier_mode)?;
                for mut col in m.column_iter_mut() {
                    let norm = col.norm();
                    let shrink = if norm > 0.0 {
                        (1.0 - step * problem.lambda2 / norm).max(0.0)
                    } else {
                        0.0
                    };
                    col.scale_mut(shrink);
                }
                let next = fold(&m, problem.outlier_mode, problem.b.shape())?;
                let obj = problem.objective_at(problem.coeffs, &next, &o)?;
                let change = next.sub(&e)?.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                let size = next.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
                e = next;
                if (prev - obj).abs() < budget.objective_tol * prev.abs().max(1.0) && change < 1e-13 * size {
                    return Ok(BlockValue::Tensor(e));
                }
                prev = obj;
            }
            Err(exhausted("outlier", budget.max_steps))
        }
        Block::Compensation => {
            let mask = problem
                .mask
                .ok_or_else(|| invalid("the compensation block needs a mask"))?;
            let s = problem.lowrank_total()?;
            let step = 0.5 / n;
            let mut o = DenseTensor::zeros(problem.b.shape())?;
            let scale = s.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            for _ in 0..budget.max_steps {
                let mut grad = add_all(&[&o, &s, problem.outliers, problem.b], &[n, 1.0, n, -n])?;
                grad = DenseTensor::new(
                    grad.shape().to_vec(),
                    grad.data()
                        .iter()
                        .zip(mask.bits())
                        .map(|(&g, &seen)| if seen { 0.0 } else { g })
                        .collect(),
                )?;
                let gnorm = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                if gnorm < budget.gradient_tol * scale {
                    return Ok(BlockValue::Tensor(o));
                }
                o = o.sub(&grad.scaled(step))?;
            }
            Err(exhausted("compensation", budget.max_steps))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rotation(theta: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn identity_and_rotated_diagonal() {
        let svd = oracle_svd(&Matrix::identity(4, 4)).unwrap();
        assert!(svd.singular_values.iter().all(|&s| (s - 1.0).abs() < 1e-15));
        let d = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        for theta in [0.1, 0.7, 2.3] {
            let m = rotation(theta) * &d * rotation(-0.4 * theta);
            let s = oracle_svd(&m).unwrap().singular_values;
            assert_relative_eq!(s[0], 3.0, epsilon = 1e-12);
            assert_relative_eq!(s[1], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn nuclear_norm_of_rank_one_column() {
        let m = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 0.0]);
        assert_relative_eq!(nuclear_norm(&m).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_on_rectangular_inputs() {
        for (r, c) in [(7, 3), (3, 7), (5, 5), (1, 4)] {
            let m = Matrix::from_fn(r, c, |i, j| ((i * 3 + j * 5) as f64 * 0.61).sin() + 0.1 * j as f64);
            let svd = oracle_svd(&m).unwrap();
            let err = (svd.reconstruct() - &m).norm();
            assert!(err <= 1e-10 * m.norm(), "{r}x{c}: {err}");
            assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(svd.u.shape(), (r, r.min(c)));
            assert_eq!(svd.v.shape(), (c, r.min(c)));
        }
    }

    #[test]
    fn split_attains_the_bound() {
        let m = Matrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).cos());
        let (l, r) = svd_split(&m).unwrap();
        assert!((&l * r.transpose() - &m).norm() < 1e-10 * m.norm());
        let half = 0.5 * (l.norm_squared() + r.norm_squared());
        assert_relative_eq!(half, nuclear_norm(&m).unwrap(), max_relative = 1e-8);
    }

    #[test]
    fn outlier_block_with_huge_penalty_is_zero() {
        let shape = [3, 3, 3];
        let b = DenseTensor::from_fn(&shape, |i| (i[0] + i[1] * i[2]) as f64).unwrap();
        let dicts: Vec<Matrix> = shape.iter().map(|&e| Matrix::from_element(e, 1, 0.5)).collect();
        let coeffs: Vec<Matrix> = shape.iter().map(|&e| Matrix::zeros(27 / e, 1)).collect();
        let e = DenseTensor::zeros(&shape).unwrap();
        let p = BlockProblem {
            dicts: &dicts,
            coeffs: &coeffs,
            b: &b,
            outliers: &e,
            compensation: None,
            mask: None,
            lambda1: 0.01,
            lambda2: 1e6,
            outlier_mode: 0,
        };
        match oracle_descent(&p, Block::Outliers, &DescentBudget::default()).unwrap() {
            BlockValue::Tensor(t) => assert!(t.is_zero()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(oracle_descent(&p, Block::Compensation, &DescentBudget::default()).is_err());
    }
}

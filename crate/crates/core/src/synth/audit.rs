//! Randomised checks of the engine against the brute-force oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::generate::{gen_stream, SynthSpec};
use super::oracle::{nuclear_norm, oracle_descent, svd_split, Block, BlockProblem, BlockValue, DescentBudget};
use crate::engine::state::update_columns;
use crate::engine::{dictionary_surrogate, solve_with, update_e, update_o, update_r, InnerParams};
use crate::error::{invalid, Result};
use crate::tensor::{frob_norm, DenseTensor, Matrix, ObservationMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementReport {
    pub instances: usize,
    /// Largest relative gap between the closed form and the oracle, per block.
    pub coefficients: f64,
    pub outliers: f64,
    pub compensation: f64,
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let size = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if size == 0.0 {
        diff
    } else {
        diff / size
    }
}

fn uniform_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Result<DenseTensor> {
    DenseTensor::from_fn(shape, |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Engine closed forms against block descent on random `shape` instances
/// with partial observation and a few loud fibers.
pub fn oracle_agreement(instances: usize, shape: &[usize], seed: u64) -> Result<AgreementReport> {
    let mut report = AgreementReport {
        instances,
        coefficients: 0.0,
        outliers: 0.0,
        compensation: 0.0,
    };
    let budget = DescentBudget::default();
    let len: usize = shape.iter().product();
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let rank = 2;
        let dicts: Vec<Matrix> = shape
            .iter()
            .map(|&e| Matrix::from_fn(e, rank, |_, _| rng.random::<f64>() + 0.2))
            .collect();
        let mut b = uniform_tensor(shape, &mut rng, 1.0)?;
        // make a handful of fibers loud so the shrinkage keeps some of them
        let mut data = b.into_data();
        for j in 0..3 {
            let col = rng.random_range(0..len / shape[0]);
            for i in 0..shape[0] {
                data[i + shape[0] * col] += (3.0 + j as f64) * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        let bits: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < 0.8).collect();
        let mask = ObservationMask::new(shape.to_vec(), bits)?;
        b = mask.apply(&DenseTensor::new(shape.to_vec(), data)?)?;
        let e = uniform_tensor(shape, &mut rng, 0.3)?;
        let o = mask_complement(&uniform_tensor(shape, &mut rng, 0.3)?, &mask)?;
        let (lambda1, lambda2) = (0.01, 0.5 + rng.random::<f64>());

        let coeffs = update_r(&dicts, &b, &e, Some(&o), lambda1)?;
        let problem = BlockProblem {
            dicts: &dicts,
            coeffs: &coeffs,
            b: &b,
            outliers: &e,
            compensation: Some(&o),
            mask: Some(&mask),
            lambda1,
            lambda2,
            outlier_mode: 0,
        };
        for (mode, r) in coeffs.iter().enumerate() {
            let BlockValue::Coefficients(oracle) = oracle_descent(&problem, Block::Coefficients(mode), &budget)? else {
                return Err(invalid("coefficient oracle returned a tensor"));
            };
            report.coefficients = report.coefficients.max(rel_gap(r.as_slice(), oracle.as_slice()));
        }

        let engine_e = update_e(&dicts, &coeffs, &b, Some(&o), lambda2, 0)?;
        let BlockValue::Tensor(oracle_e) = oracle_descent(&problem, Block::Outliers, &budget)? else {
            return Err(invalid("outlier oracle returned a matrix"));
        };
        report.outliers = report.outliers.max(rel_gap(engine_e.data(), oracle_e.data()));

        let engine_o = update_o(&dicts, &coeffs, &b, &e, &mask)?;
        let BlockValue::Tensor(oracle_o) = oracle_descent(&problem, Block::Compensation, &budget)? else {
            return Err(invalid("compensation oracle returned a matrix"));
        };
        report.compensation = report.compensation.max(rel_gap(engine_o.data(), oracle_o.data()));
    }
    Ok(report)
}

fn mask_complement(t: &DenseTensor, mask: &ObservationMask) -> Result<DenseTensor> {
    DenseTensor::new(
        t.shape().to_vec(),
        t.data()
            .iter()
            .zip(mask.bits())
            .map(|(&v, &seen)| if seen { 0.0 } else { v })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CountReport {
    pub checked: usize,
    pub violations: usize,
}

/// Records the inner-loop objective on small synthetic minibatches (full and
/// partial observation) and counts iterations where it rose.
pub fn objective_monotonicity(solves: usize, seed: u64) -> Result<CountReport> {
    let mut report = CountReport {
        checked: 0,
        violations: 0,
    };
    for k in 0..solves {
        let spec = SynthSpec {
            minibatch_shape: vec![10, 9, 4],
            core_dims: vec![2, 2, 2],
            num_minibatches: 1,
            corruption_ratio: 0.1,
            observation_ratio: if k % 2 == 0 { 1.0 } else { 0.8 },
            seed: seed.wrapping_add(k as u64),
            ..Default::default()
        };
        let mb = gen_stream(&spec)?.next().ok_or_else(|| invalid("empty stream"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xABCD);
        let dicts: Vec<Matrix> = spec
            .minibatch_shape
            .iter()
            .map(|&e| Matrix::from_fn(e, 2, |_, _| rng.random::<f64>()))
            .collect();
        let params = InnerParams {
            lambda1: 0.01,
            lambda2: 0.05 + 0.5 * rng.random::<f64>(),
            epsilon: 1e-6,
            max_inner_iters: 200,
            outlier_mode: 0,
            record_objective: true,
        };
        let sol = solve_with(&dicts, &mb.observed, &mb.truth.mask, &params)?;
        for w in sol.objective_trace.windows(2) {
            report.checked += 1;
            if w[1] > w[0] * (1.0 + 1e-12) {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub matrices: usize,
    pub bound_violations: usize,
    /// Largest relative gap between the SVD-split factor cost and the nuclear norm.
    pub split_gap: f64,
}

/// The variational bound on random matrices up to 20 x 20, using the engine's
/// coefficient solve to produce the factorisation.
pub fn variational_bound(matrices: usize, seed: u64) -> Result<BoundReport> {
    let mut report = BoundReport {
        matrices,
        bound_violations: 0,
        split_gap: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..matrices {
        let (rows, cols) = (rng.random_range(2..=20), rng.random_range(2..=20));
        let rank = rng.random_range(1..=rows.min(cols));
        let m = Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5);
        let t = DenseTensor::new(vec![rows, cols], m.as_slice().to_vec())?;
        let l: Matrix = Matrix::from_fn(rows, rank, |_, _| rng.random::<f64>() - 0.5);
        let dicts = vec![l.clone(), Matrix::zeros(cols, rank)];
        let r = update_r(&dicts, &t, &DenseTensor::zeros(&[rows, cols])?, None, 0.01)?.swap_remove(0);
        let x = &l * r.transpose();
        let cost = 0.5 * (l.norm_squared() + r.norm_squared());
        if cost < nuclear_norm(&x)? * (1.0 - 1e-12) {
            report.bound_violations += 1;
        }
        let (ls, rs) = svd_split(&m)?;
        let nuclear = nuclear_norm(&m)?;
        let split = 0.5 * (ls.norm_squared() + rs.norm_squared());
        report.split_gap = report.split_gap.max((split - nuclear).abs() / nuclear);
    }
    Ok(report)
}

/// One dictionary sweep on random accumulators; counts sweeps that raised
/// the surrogate.
pub fn surrogate_monotonicity(sweeps: usize, seed: u64) -> Result<CountReport> {
    let mut report = CountReport {
        checked: 0,
        violations: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sweeps {
        let (rows, rank) = (rng.random_range(1..=30), rng.random_range(1..=5));
        let samples = rng.random_range(1..=40);
        let r = Matrix::from_fn(samples, rank, |_, _| rng.random::<f64>() - 0.5);
        let a = r.tr_mul(&r);
        let d = Matrix::from_fn(rows, rank, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let mut l = Matrix::from_fn(rows, rank, |_, _| rng.random::<f64>());
        let lambda1 = 0.01;
        let before = dictionary_surrogate(&l, &a, &d, lambda1);
        let mut a_tilde = a.clone();
        for k in 0..rank {
            a_tilde[(k, k)] += lambda1;
        }
        update_columns(&mut l, &a_tilde, &d);
        let after = dictionary_surrogate(&l, &a, &d, lambda1);
        report.checked += 1;
        if after > before + 1e-12 * before.abs().max(1.0) {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// `‖a − b‖_F / ‖b‖_F`, or the plain norm when `b` is zero.
pub fn relative_gap(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    let diff = frob_norm(&a.sub(b)?);
    let size = frob_norm(b);
    Ok(if size == 0.0 { diff } else { diff / size })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_audits_pass() {
        let ag = oracle_agreement(3, &[4, 3, 3], 1).unwrap();
        assert!(ag.coefficients < 1e-6, "{ag:?}");
        assert!(ag.outliers < 1e-5, "{ag:?}");
        assert!(ag.compensation < 1e-8, "{ag:?}");
        assert_eq!(objective_monotonicity(4, 2).unwrap().violations, 0);
        let vb = variational_bound(10, 3).unwrap();
        assert_eq!(vb.bound_violations, 0);
        assert!(vb.split_gap < 1e-8);
        assert_eq!(surrogate_monotonicity(50, 4).unwrap().violations, 0);
    }
}

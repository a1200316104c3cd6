use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::{mode_n_product, mode_split, DenseTensor, Matrix, ObservationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Each entry observed independently with probability `observation_ratio`.
    #[default]
    Bernoulli,
    /// Exactly `round(observation_ratio * len)` entries observed per minibatch.
    ExactCount,
}

/// Parameters of a synthetic low-rank stream with fiber outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Extents of one minibatch; the last one is the per-minibatch slab width.
    pub minibatch_shape: Vec<usize>,
    pub core_dims: Vec<usize>,
    pub num_minibatches: usize,
    pub corruption_ratio: f64,
    pub corruption_magnitude: f64,
    pub observation_ratio: f64,
    pub mask_mode: MaskMode,
    /// Mode whose fibers get corrupted.
    pub fiber_mode: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            minibatch_shape: vec![50, 50, 1],
            core_dims: vec![3, 3, 1],
            num_minibatches: 100,
            corruption_ratio: 0.05,
            corruption_magnitude: 2.0,
            observation_ratio: 1.0,
            mask_mode: MaskMode::Bernoulli,
            fiber_mode: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.minibatch_shape.len();
        if n < 2 || self.minibatch_shape.contains(&0) {
            return Err(invalid(format!("bad minibatch shape {:?}", self.minibatch_shape)));
        }
        if self.core_dims.len() != n {
            return Err(invalid("core dims must match the minibatch order"));
        }
        for (i, (&c, &e)) in self.core_dims.iter().zip(&self.minibatch_shape).enumerate() {
            if c == 0 || c > e {
                return Err(invalid(format!("core dim {c} on mode {i} must lie in 1..={e}")));
            }
        }
        if !(0.0..=1.0).contains(&self.corruption_ratio) {
            return Err(invalid(format!("corruption ratio {} outside [0, 1]", self.corruption_ratio)));
        }
        if !(self.corruption_magnitude.is_finite() && self.corruption_magnitude > 0.0) {
            return Err(invalid("corruption magnitude must be positive"));
        }
        if !(self.observation_ratio > 0.0 && self.observation_ratio <= 1.0) {
            return Err(invalid(format!(
                "observation ratio {} outside (0, 1]",
                self.observation_ratio
            )));
        }
        if self.fiber_mode >= n {
            return Err(invalid(format!("fiber mode {} out of range", self.fiber_mode)));
        }
        Ok(())
    }

    /// Number of fibers along `fiber_mode` in one minibatch.
    pub fn fiber_count(&self) -> usize {
        self.minibatch_shape.iter().product::<usize>() / self.minibatch_shape[self.fiber_mode]
    }

    pub fn corrupted_per_minibatch(&self) -> usize {
        (self.corruption_ratio * self.fiber_count() as f64).round() as usize
    }
}

/// Orthonormal `rows x cols` basis from Gram-Schmidt on Gaussian draws.
pub fn gen_orthobasis<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix> {
    if cols > rows {
        return Err(invalid(format!("cannot fit {cols} orthonormal columns in {rows} rows")));
    }
    let mut u = Matrix::zeros(rows, cols);
    let mut j = 0;
    while j < cols {
        let mut v = nalgebra::DVector::<f64>::from_fn(rows, |_, _| StandardNormal.sample(rng));
        let scale = v.norm();
        // two passes keep the columns orthogonal to working precision
        for _ in 0..2 {
            for k in 0..j {
                let q = u.column(k);
                let p = q.dot(&v);
                v.axpy(-p, &q, 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-10 * scale.max(1.0) {
            continue;
        }
        u.set_column(j, &(v / norm));
        j += 1;
    }
    Ok(u)
}

/// What the generator knows about one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub clean: DenseTensor,
    pub outliers: DenseTensor,
    pub mask: ObservationMask,
    pub corrupted_fibers: BTreeSet<usize>,
    pub fiber_mode: usize,
}

impl GroundTruth {
    /// Truth for an uncorrupted, fully observed minibatch.
    pub fn clean_only(clean: DenseTensor, fiber_mode: usize) -> Result<Self> {
        let shape = clean.shape().to_vec();
        Ok(Self {
            outliers: DenseTensor::zeros(&shape)?,
            mask: ObservationMask::full(&shape)?,
            clean,
            corrupted_fibers: BTreeSet::new(),
            fiber_mode,
        })
    }

    /// Columns `range` of the last mode, with fiber ids renumbered.
    pub fn slice_last(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let shape = self.clean.shape();
        let last = shape.len() - 1;
        if self.fiber_mode == last {
            return Err(invalid("cannot slice the fiber mode"));
        }
        // fibers along a non-last mode are numbered with the last mode slowest
        let per_slab = shape[..last].iter().product::<usize>() / shape[self.fiber_mode];
        let (lo, hi) = (range.start * per_slab, range.end * per_slab);
        Ok(Self {
            clean: self.clean.slice_last(range.clone())?,
            outliers: self.outliers.slice_last(range.clone())?,
            mask: self.mask.slice_last(range)?,
            corrupted_fibers: self
                .corrupted_fibers
                .range(lo..hi)
                .map(|&j| j - lo)
                .collect(),
            fiber_mode: self.fiber_mode,
        })
    }
}

/// Observed data with its truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMinibatch {
    /// `X₀ + E₀`, zero on unobserved entries.
    pub observed: DenseTensor,
    pub truth: GroundTruth,
}

/// Storage offsets of every entry of fiber `j` along `mode`.
pub(crate) fn fiber_offsets(shape: &[usize], mode: usize, j: usize) -> impl Iterator<Item = usize> {
    let (left, ext, _) = mode_split(shape, mode).expect("mode checked by caller");
    let (a, c) = (j % left, j / left);
    (0..ext).map(move |b| a + left * (b + ext * c))
}

/// Lazy generator: fixed orthonormal factors, a fresh Gaussian core per
/// minibatch. Cloning snapshots the generator, so a clone replays the same
/// minibatches.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    spec: SynthSpec,
    factors: Vec<Matrix>,
    rng: ChaCha8Rng,
    emitted: usize,
}

impl SyntheticStream {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let factors = spec
            .minibatch_shape
            .iter()
            .zip(&spec.core_dims)
            .map(|(&e, &c)| gen_orthobasis(e, c, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            factors,
            rng,
            emitted: 0,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    fn generate(&mut self) -> Result<SynthMinibatch> {
        let spec = &self.spec;
        let shape = &spec.minibatch_shape;
        let rng = &mut self.rng;

        let core_data = (0..spec.core_dims.iter().product::<usize>())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let mut clean = DenseTensor::new(spec.core_dims.clone(), core_data)?;
        for (mode, u) in self.factors.iter().enumerate() {
            clean = mode_n_product(&clean, u, mode)?;
        }

        let len = clean.len();
        let mut outliers = vec![0.0; len];
        let corrupt_count = spec.corrupted_per_minibatch();
        let corrupted: BTreeSet<usize> = sample(rng, spec.fiber_count(), corrupt_count).into_iter().collect();
        let noise = Uniform::new_inclusive(-spec.corruption_magnitude, spec.corruption_magnitude)
            .map_err(|e| invalid(e.to_string()))?;
        let mut clean_data = clean.into_data();
        for &j in &corrupted {
            for k in fiber_offsets(shape, spec.fiber_mode, j) {
                clean_data[k] = 0.0;
                outliers[k] = noise.sample(rng);
            }
        }

        let bits: Vec<bool> = if spec.observation_ratio >= 1.0 {
            vec![true; len]
        } else {
            match spec.mask_mode {
                MaskMode::Bernoulli => (0..len).map(|_| rng.random::<f64>() < spec.observation_ratio).collect(),
                MaskMode::ExactCount => {
                    let keep = (spec.observation_ratio * len as f64).round() as usize;
                    let mut bits = vec![false; len];
                    for k in sample(rng, len, keep) {
                        bits[k] = true;
                    }
                    bits
                }
            }
        };

        let observed = clean_data
            .iter()
            .zip(&outliers)
            .zip(&bits)
            .map(|((&x, &e), &seen)| if seen { x + e } else { 0.0 })
            .collect();
        Ok(SynthMinibatch {
            observed: DenseTensor::new(shape.clone(), observed)?,
            truth: GroundTruth {
                clean: DenseTensor::new(shape.clone(), clean_data)?,
                outliers: DenseTensor::new(shape.clone(), outliers)?,
                mask: ObservationMask::new(shape.clone(), bits)?,
                corrupted_fibers: corrupted,
                fiber_mode: spec.fiber_mode,
            },
        })
    }
}

impl Iterator for SyntheticStream {
    type Item = SynthMinibatch;

    fn next(&mut self) -> Option<SynthMinibatch> {
        if self.emitted >= self.spec.num_minibatches {
            return None;
        }
        self.emitted += 1;
        Some(self.generate().expect("spec validated at construction"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.num_minibatches - self.emitted;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SyntheticStream {}

/// Validates `spec` and returns its stream.
pub fn gen_stream(spec: &SynthSpec) -> Result<SyntheticStream> {
    SyntheticStream::new(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle_svd;
    use crate::tensor::unfold;
    use proptest::prelude::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            minibatch_shape: vec![8, 7, 3],
            core_dims: vec![2, 3, 2],
            num_minibatches: 4,
            corruption_ratio: 0.2,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn square_basis_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = gen_orthobasis(6, 6, &mut rng).unwrap();
        assert!((u.determinant().abs() - 1.0).abs() < 1e-8);
        assert!(gen_orthobasis(3, 4, &mut rng).is_err());
        let a = gen_orthobasis(9, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gen_orthobasis(9, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn basis_columns_are_orthonormal(rows in 1usize..40, frac in 0.0f64..=1.0, seed: u64) {
            let cols = ((rows as f64 * frac).round() as usize).clamp(1, rows);
            let u = gen_orthobasis(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let dev = (u.tr_mul(&u) - Matrix::identity(cols, cols)).abs().max();
            prop_assert!(dev < 1e-12, "deviation {}", dev);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(small(0).validate().is_ok());
        for bad in [
            SynthSpec { core_dims: vec![9, 3, 2], ..small(0) },
            SynthSpec { corruption_ratio: 1.5, ..small(0) },
            SynthSpec { observation_ratio: 0.0, ..small(0) },
            SynthSpec { corruption_magnitude: 0.0, ..small(0) },
            SynthSpec { core_dims: vec![2, 3], ..small(0) },
        ] {
            assert!(SyntheticStream::new(&bad).is_err());
        }
    }

    #[test]
    fn deterministic_and_replayable() {
        let a: Vec<_> = gen_stream(&small(3)).unwrap().collect();
        let b: Vec<_> = gen_stream(&small(3)).unwrap().collect();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let mut s = gen_stream(&small(3)).unwrap();
        s.next();
        let replay = s.clone();
        assert_eq!(s.collect::<Vec<_>>(), replay.collect::<Vec<_>>());
        let c: Vec<_> = gen_stream(&small(4)).unwrap().collect();
        assert_ne!(a[0].observed, c[0].observed);
    }

    #[test]
    fn no_corruption_means_observed_equals_clean() {
        let spec = SynthSpec {
            corruption_ratio: 0.0,
            ..small(1)
        };
        for mb in gen_stream(&spec).unwrap() {
            assert!(mb.truth.outliers.is_zero());
            assert!(mb.truth.corrupted_fibers.is_empty());
            assert_eq!(mb.observed, mb.truth.clean);
        }
    }

    #[test]
    fn corrupted_fibers_are_replaced() {
        let spec = SynthSpec {
            observation_ratio: 0.7,
            ..small(2)
        };
        let expected = (0.2f64 * 21.0).round() as usize;
        for mb in gen_stream(&spec).unwrap() {
            let t = &mb.truth;
            assert_eq!(t.corrupted_fibers.len(), expected);
            let shape = t.clean.shape();
            for j in 0..spec.fiber_count() {
                let hit = t.corrupted_fibers.contains(&j);
                for k in fiber_offsets(shape, 0, j) {
                    if hit {
                        assert_eq!(t.clean.data()[k], 0.0);
                        assert!(t.outliers.data()[k].abs() <= 2.0);
                    } else {
                        assert_eq!(t.outliers.data()[k], 0.0);
                    }
                    let seen = t.mask.bits()[k];
                    let want = if seen { t.clean.data()[k] + t.outliers.data()[k] } else { 0.0 };
                    assert_eq!(mb.observed.data()[k], want);
                    if seen && !hit {
                        assert_eq!(mb.observed.data()[k], t.clean.data()[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn clean_part_has_core_rank() {
        let spec = SynthSpec {
            corruption_ratio: 0.0,
            minibatch_shape: vec![9, 8, 7],
            core_dims: vec![2, 3, 4],
            ..small(6)
        };
        for mb in gen_stream(&spec).unwrap() {
            for (mode, &c) in spec.core_dims.iter().enumerate() {
                let s = oracle_svd(&unfold(&mb.truth.clean, mode).unwrap()).unwrap().singular_values;
                assert!(s[c - 1] > 1e-8 * s[0]);
                assert!(s[c..].iter().all(|&v| v < 1e-8 * s[0]), "mode {mode}: {s:?}");
            }
        }
    }

    #[test]
    fn exact_count_mask() {
        let spec = SynthSpec {
            observation_ratio: 0.9,
            mask_mode: MaskMode::ExactCount,
            ..small(8)
        };
        for mb in gen_stream(&spec).unwrap() {
            assert_eq!(mb.truth.mask.observed_count(), (0.9f64 * 168.0).round() as usize);
        }
    }

    #[test]
    fn truth_slicing_renumbers_fibers() {
        let mb = gen_stream(&small(9)).unwrap().next().unwrap();
        let per_slab = 7;
        let part = mb.truth.slice_last(1..3).unwrap();
        let want: BTreeSet<usize> = mb
            .truth
            .corrupted_fibers
            .iter()
            .filter(|&&j| (per_slab..3 * per_slab).contains(&j))
            .map(|j| j - per_slab)
            .collect();
        assert_eq!(part.corrupted_fibers, want);
        assert_eq!(part.clean.shape(), &[8, 7, 2]);
    }
}

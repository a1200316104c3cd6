use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Accumulation, RunConfig};
use crate::error::{invalid, Error, Result};
use crate::tensor::{unfold_matmul, DenseTensor, Matrix};

/// Everything carried from one minibatch to the next: per-mode dictionaries
/// `L_i` (`I_i x r`), Gram accumulators `A_i` (`r x r`) and cross-moment
/// accumulators `D_i` (`I_i x r`). Sizes are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryState {
    pub(crate) dictionaries: Vec<Matrix>,
    pub(crate) grams: Vec<Matrix>,
    pub(crate) cross: Vec<Matrix>,
    pub(crate) minibatch_count: u64,
    pub(crate) minibatch_shape: Vec<usize>,
    pub(crate) rank: usize,
}

/// Seeds a generator per mode so adding modes never perturbs earlier ones.
pub(crate) fn mode_rng(seed: u64, mode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mode as u64);
    rng
}

/// Fresh state: `L_i ~ U(0,1)` i.i.d., `A_i = 0`, `D_i = 0`, `t = 0`.
pub fn init_state(minibatch_shape: &[usize], config: &RunConfig) -> Result<DictionaryState> {
    config.validate()?;
    DenseTensor::zeros(minibatch_shape)?;
    let r = config.rank;
    let dictionaries = minibatch_shape
        .iter()
        .enumerate()
        .map(|(mode, &ext)| {
            let mut rng = mode_rng(config.seed, mode);
            Matrix::from_fn(ext, r, |_, _| rng.random::<f64>())
        })
        .collect();
    Ok(DictionaryState {
        dictionaries,
        grams: minibatch_shape.iter().map(|_| Matrix::zeros(r, r)).collect(),
        cross: minibatch_shape
            .iter()
            .map(|&ext| Matrix::zeros(ext, r))
            .collect(),
        minibatch_count: 0,
        minibatch_shape: minibatch_shape.to_vec(),
        rank: r,
    })
}

impl DictionaryState {
    pub fn dictionaries(&self) -> &[Matrix] {
        &self.dictionaries
    }

    pub fn grams(&self) -> &[Matrix] {
        &self.grams
    }

    pub fn cross_moments(&self) -> &[Matrix] {
        &self.cross
    }

    pub fn minibatch_count(&self) -> u64 {
        self.minibatch_count
    }

    pub fn minibatch_shape(&self) -> &[usize] {
        &self.minibatch_shape
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn order(&self) -> usize {
        self.minibatch_shape.len()
    }

    /// Number of `f64` values held across all modes.
    pub fn scalar_count(&self) -> usize {
        self.dictionaries
            .iter()
            .chain(&self.grams)
            .chain(&self.cross)
            .map(|m| m.len())
            .sum()
    }

    pub(crate) fn from_parts(
        minibatch_shape: Vec<usize>,
        rank: usize,
        minibatch_count: u64,
        dictionaries: Vec<Matrix>,
        grams: Vec<Matrix>,
        cross: Vec<Matrix>,
    ) -> Result<Self> {
        let n = minibatch_shape.len();
        if dictionaries.len() != n || grams.len() != n || cross.len() != n {
            return Err(invalid("one dictionary, Gram and cross matrix per mode"));
        }
        for (i, &ext) in minibatch_shape.iter().enumerate() {
            if dictionaries[i].shape() != (ext, rank)
                || grams[i].shape() != (rank, rank)
                || cross[i].shape() != (ext, rank)
            {
                return Err(invalid(format!("mode {i} matrices have the wrong size")));
            }
        }
        Ok(Self {
            dictionaries,
            grams,
            cross,
            minibatch_count,
            minibatch_shape,
            rank,
        })
    }

    /// Folds one minibatch into the accumulators:
    /// `A_i += R_iᵀ R_i` and `D_i += (B - E [- O])_(i) R_i`.
    pub fn accumulate(
        &mut self,
        b: &DenseTensor,
        e: &DenseTensor,
        o: Option<&DenseTensor>,
        coeffs: &[Matrix],
        mode: Accumulation,
    ) -> Result<()> {
        b.check_same_shape(&self.minibatch_shape)?;
        e.check_same_shape(&self.minibatch_shape)?;
        if coeffs.len() != self.order() {
            return Err(invalid("one coefficient matrix per mode"));
        }
        let mut resid = b.sub(e)?;
        if let (Some(o), Accumulation::Compensated) = (o, mode) {
            resid = resid.sub(o)?;
        }
        for (i, r) in coeffs.iter().enumerate() {
            if r.ncols() != self.rank {
                return Err(invalid(format!("mode {i} coefficients have {} columns", r.ncols())));
            }
            let cross = unfold_matmul(&resid, i, r)?;
            self.grams[i] += r.tr_mul(r);
            self.cross[i] += cross;
        }
        self.minibatch_count += 1;
        Ok(())
    }

    /// One block-coordinate sweep over the dictionary columns of every mode,
    /// warm-started from the current dictionaries.
    pub fn update_dictionary(&mut self, lambda1: f64) -> Result<()> {
        if self.minibatch_count == 0 {
            return Err(invalid("dictionary update needs at least one accumulated minibatch"));
        }
        for mode in 0..self.order() {
            let mut a_tilde = self.grams[mode].clone();
            for k in 0..self.rank {
                a_tilde[(k, k)] += lambda1;
            }
            update_columns(&mut self.dictionaries[mode], &a_tilde, &self.cross[mode]);
        }
        if self
            .dictionaries
            .iter()
            .any(|l| l.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("dictionary update"));
        }
        Ok(())
    }
}

/// `l_j <- (d_j - L ã_j) / ã_jj + l_j` for `j = 0..r`, in place.
pub(crate) fn update_columns(l: &mut Matrix, a_tilde: &Matrix, d: &Matrix) {
    for j in 0..l.ncols() {
        let step = (d.column(j) - &*l * a_tilde.column(j)) / a_tilde[(j, j)];
        let mut col = l.column_mut(j);
        col += step;
    }
}

/// `½ Tr(Lᵀ Ã L) - Tr(Lᵀ D)` with `Ã = A + λ1 I`: the quantity a dictionary
/// sweep minimises.
pub fn dictionary_surrogate(l: &Matrix, a: &Matrix, d: &Matrix, lambda1: f64) -> f64 {
    let mut a_tilde = a.clone();
    for k in 0..a.nrows() {
        a_tilde[(k, k)] += lambda1;
    }
    0.5 * (l.transpose() * l * a_tilde).trace() - (l.transpose() * d).trace()
}

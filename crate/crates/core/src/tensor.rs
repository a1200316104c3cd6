//! Dense N-way tensors and the multilinear algebra used by the recovery engine.
//!
//! Storage is first-index-fastest: the entry `(i_1, ..., i_N)` lives at
//! `i_1 + I_1 * (i_2 + I_2 * (i_3 + ...))`. Modes are zero-based throughout.
//!
//! The mode-`n` unfolding places the mode-`n` fibers as columns. Column `j`
//! corresponds to the multi-index over the remaining modes with the lowest
//! numbered mode varying fastest, so for any mode the tensor can be read as a
//! `left x I_n x right` block where `left = I_1 ... I_{n-1}` and
//! `right = I_{n+1} ... I_N`, and column `j = a + left * c`.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

/// Column-major dense matrix. Unfoldings, dictionaries and coefficient
/// matrices all use this type.
pub type Matrix = DMatrix<f64>;

/// Dense real tensor of order two or higher.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Observed-entry indicator with the same layout as its paired tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// `(left, extent, right)` block view of `shape` around `mode`.
pub(crate) fn mode_split(shape: &[usize], mode: usize) -> Result<(usize, usize, usize)> {
    if mode >= shape.len() {
        return Err(Error::InvalidMode {
            mode,
            order: shape.len(),
        });
    }
    let left = shape[..mode].iter().product();
    let right = shape[mode + 1..].iter().product();
    Ok((left, shape[mode], right))
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(invalid(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, e) in idx.iter_mut().zip(shape) {
                *i += 1;
                if *i < *e {
                    break;
                }
                *i = 0;
            }
        }
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index order mismatch");
        let mut offset = 0;
        for (&i, &e) in idx.iter().zip(&self.shape).rev() {
            assert!(i < e, "index {idx:?} out of bounds for {:?}", self.shape);
            offset = offset * e + i;
        }
        offset
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    /// # Panics
    /// If `value` is not finite or `idx` is out of bounds.
    pub fn set(&mut self, idx: &[usize], value: f64) {
        assert!(value.is_finite(), "tensor entries must be finite");
        let at = self.linear_index(idx);
        self.data[at] = value;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub(crate) fn check_same_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Entries `range` of the last mode. The slab is contiguous in storage.
    pub fn slice_last(&self, range: Range<usize>) -> Result<Self> {
        let last = *self.shape.last().expect("order >= 2");
        if range.start >= range.end || range.end > last {
            return Err(invalid(format!(
                "last-mode range {range:?} invalid for extent {last}"
            )));
        }
        let slab = self.len() / last;
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = range.len();
        Ok(Self {
            shape,
            data: self.data[slab * range.start..slab * range.end].to_vec(),
        })
    }

    /// Concatenates tensors that agree on every mode but the last.
    pub fn concat_last(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("cannot concatenate zero tensors"))?;
        let lead = &first.shape[..first.order() - 1];
        let mut last = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.order() != first.order() || &p.shape[..p.order() - 1] != lead {
                return Err(Error::ShapeMismatch {
                    expected: first.shape.clone(),
                    found: p.shape.clone(),
                });
            }
            last += p.shape[p.order() - 1];
            data.extend_from_slice(&p.data);
        }
        let mut shape = lead.to_vec();
        shape.push(last);
        Ok(Self { shape, data })
    }
}

impl ObservationMask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if bits.len() != len {
            return Err(invalid(format!(
                "mask shape {shape:?} needs {len} entries, got {}",
                bits.len()
            )));
        }
        Ok(Self { shape, bits })
    }

    pub fn full(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            bits: vec![true; len],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn observed_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn slice_last(&self, range: Range<usize>) -> Result<Self> {
        let last = *self.shape.last().expect("order >= 2");
        if range.start >= range.end || range.end > last {
            return Err(invalid(format!(
                "last-mode range {range:?} invalid for extent {last}"
            )));
        }
        let slab = self.bits.len() / last;
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = range.len();
        Ok(Self {
            shape,
            bits: self.bits[slab * range.start..slab * range.end].to_vec(),
        })
    }

    /// Zeroes the unobserved entries of `t`.
    pub fn apply(&self, t: &DenseTensor) -> Result<DenseTensor> {
        t.check_same_shape(&self.shape)?;
        let mut out = t.clone();
        for (v, &keep) in out.data.iter_mut().zip(&self.bits) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(out)
    }
}

/// Mode-`mode` unfolding: an `I_mode x prod(I_k, k != mode)` matrix.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    let (left, ext, right) = mode_split(&t.shape, mode)?;
    let mut m = Matrix::zeros(ext, left * right);
    for c in 0..right {
        for b in 0..ext {
            let base = left * (b + ext * c);
            for a in 0..left {
                m[(b, a + left * c)] = t.data[base + a];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let len = check_shape(shape)?;
    let (left, ext, right) = mode_split(shape, mode)?;
    if m.nrows() != ext || m.ncols() != left * right {
        return Err(invalid(format!(
            "a {}x{} matrix cannot fold into {shape:?} along mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![0.0; len];
    for c in 0..right {
        for b in 0..ext {
            let base = left * (b + ext * c);
            for a in 0..left {
                data[base + a] = m[(b, a + left * c)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

pub fn inner(x: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    x.check_same_shape(y.shape())?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| a * b).sum())
}

pub fn frob_norm(x: &DenseTensor) -> f64 {
    x.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `x ×_mode a`: replaces extent `I_mode` by `a.nrows()`.
pub fn mode_n_product(x: &DenseTensor, a: &Matrix, mode: usize) -> Result<DenseTensor> {
    let (left, ext, right) = mode_split(&x.shape, mode)?;
    if a.ncols() != ext {
        return Err(invalid(format!(
            "mode-{mode} product needs {ext} columns, matrix has {}",
            a.ncols()
        )));
    }
    let rows = a.nrows();
    let mut shape = x.shape.clone();
    shape[mode] = rows;
    let mut out = vec![0.0; left * rows * right];
    for c in 0..right {
        for b in 0..ext {
            let src = &x.data[left * (b + ext * c)..][..left];
            for row in 0..rows {
                let w = a[(row, b)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut out[left * (row + rows * c)..][..left];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    DenseTensor::new(shape, out)
}

/// Sum of column Euclidean norms.
pub fn l21_norm(m: &Matrix) -> f64 {
    m.column_iter().map(|c| c.norm()).sum()
}

/// Multi-index (over the non-`mode` modes, in mode order) of column `j` of
/// the mode-`mode` unfolding.
pub fn fiber_multi_index(shape: &[usize], mode: usize, j: usize) -> Result<Vec<usize>> {
    let (left, _, right) = mode_split(shape, mode)?;
    if j >= left * right {
        return Err(invalid(format!(
            "fiber {j} out of range ({} fibers)",
            left * right
        )));
    }
    let mut rest = j;
    let mut idx = Vec::with_capacity(shape.len() - 1);
    for (k, &e) in shape.iter().enumerate() {
        if k == mode {
            continue;
        }
        idx.push(rest % e);
        rest /= e;
    }
    Ok(idx)
}

/// Multi-indices of every mode-`mode` fiber, ordered as the unfolding columns.
pub fn fiber_columns(shape: &[usize], mode: usize) -> Result<Vec<Vec<usize>>> {
    let (left, _, right) = mode_split(shape, mode)?;
    (0..left * right)
        .map(|j| fiber_multi_index(shape, mode, j))
        .collect()
}

/// Inverse of [`fiber_multi_index`].
pub fn fiber_index_of(shape: &[usize], mode: usize, idx: &[usize]) -> Result<usize> {
    mode_split(shape, mode)?;
    if idx.len() + 1 != shape.len() {
        return Err(invalid("fiber multi-index has the wrong length"));
    }
    let mut j = 0;
    let mut stride = 1;
    for (&i, &e) in idx
        .iter()
        .zip(shape.iter().enumerate().filter(|(k, _)| *k != mode).map(|(_, e)| e))
    {
        if i >= e {
            return Err(invalid(format!("fiber index {idx:?} out of range")));
        }
        j += i * stride;
        stride *= e;
    }
    Ok(j)
}

// ---------------------------------------------------------------------------
// Fused kernels. These never materialise an unfolding; each is checked
// against the explicit `unfold`/`fold` path in the tests below.
// ---------------------------------------------------------------------------

/// `unfold(t, mode)ᵀ · l`, a `prod(I_k, k != mode) x r` matrix.
pub fn unfold_t_matmul(t: &DenseTensor, mode: usize, l: &Matrix) -> Result<Matrix> {
    let (left, ext, right) = mode_split(&t.shape, mode)?;
    if l.nrows() != ext {
        return Err(invalid(format!(
            "dictionary has {} rows, mode {mode} extent is {ext}",
            l.nrows()
        )));
    }
    let rank = l.ncols();
    let cols = left * right;
    let mut out = Matrix::zeros(cols, rank);
    let ls = l.as_slice();
    let os = out.as_mut_slice();
    if left == 1 {
        for c in 0..right {
            let fiber = &t.data[ext * c..][..ext];
            for k in 0..rank {
                let lk = &ls[ext * k..][..ext];
                os[c + cols * k] = fiber.iter().zip(lk).map(|(x, y)| x * y).sum();
            }
        }
    } else {
        for c in 0..right {
            for b in 0..ext {
                let src = &t.data[left * (b + ext * c)..][..left];
                for k in 0..rank {
                    let w = ls[b + ext * k];
                    let dst = &mut os[cols * k + left * c..][..left];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `unfold(t, mode) · r`, an `I_mode x rank` matrix.
pub fn unfold_matmul(t: &DenseTensor, mode: usize, r: &Matrix) -> Result<Matrix> {
    let (left, ext, right) = mode_split(&t.shape, mode)?;
    let cols = left * right;
    if r.nrows() != cols {
        return Err(invalid(format!(
            "coefficient matrix has {} rows, mode {mode} unfolding has {cols} columns",
            r.nrows()
        )));
    }
    let rank = r.ncols();
    let mut out = Matrix::zeros(ext, rank);
    let rs = r.as_slice();
    let os = out.as_mut_slice();
    if left == 1 {
        for c in 0..right {
            let fiber = &t.data[ext * c..][..ext];
            for k in 0..rank {
                let w = rs[c + cols * k];
                let dst = &mut os[ext * k..][..ext];
                for (d, s) in dst.iter_mut().zip(fiber) {
                    *d += w * s;
                }
            }
        }
    } else {
        for k in 0..rank {
            for c in 0..right {
                let rk = &rs[cols * k + left * c..][..left];
                for b in 0..ext {
                    let src = &t.data[left * (b + ext * c)..][..left];
                    os[b + ext * k] += src.iter().zip(rk).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
    }
    Ok(out)
}

/// `out += scale · fold_mode(l · rᵀ)`.
pub fn fold_matmul_add(
    out: &mut DenseTensor,
    l: &Matrix,
    r: &Matrix,
    mode: usize,
    scale: f64,
) -> Result<()> {
    let (left, ext, right) = mode_split(&out.shape, mode)?;
    let cols = left * right;
    if l.nrows() != ext || r.nrows() != cols || l.ncols() != r.ncols() {
        return Err(invalid(format!(
            "factors {}x{} and {}x{} do not fold into {:?} along mode {mode}",
            l.nrows(),
            l.ncols(),
            r.nrows(),
            r.ncols(),
            out.shape
        )));
    }
    let rank = l.ncols();
    let ls = l.as_slice();
    let rs = r.as_slice();
    if left == 1 {
        for c in 0..right {
            let dst = &mut out.data[ext * c..][..ext];
            for k in 0..rank {
                let w = scale * rs[c + cols * k];
                if w == 0.0 {
                    continue;
                }
                let lk = &ls[ext * k..][..ext];
                for (d, s) in dst.iter_mut().zip(lk) {
                    *d += w * s;
                }
            }
        }
    } else {
        for c in 0..right {
            for b in 0..ext {
                let dst = &mut out.data[left * (b + ext * c)..][..left];
                for k in 0..rank {
                    let w = scale * ls[b + ext * k];
                    if w == 0.0 {
                        continue;
                    }
                    let rk = &rs[cols * k + left * c..][..left];
                    for (d, s) in dst.iter_mut().zip(rk) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Euclidean norm of every mode-`mode` fiber, indexed like the unfolding columns.
pub fn fiber_norms(t: &DenseTensor, mode: usize) -> Result<Vec<f64>> {
    let (left, ext, right) = mode_split(&t.shape, mode)?;
    let mut sq = vec![0.0; left * right];
    for c in 0..right {
        for b in 0..ext {
            let src = &t.data[left * (b + ext * c)..][..left];
            let dst = &mut sq[left * c..][..left];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * s;
            }
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// Multiplies every mode-`mode` fiber `j` by `factors[j]`.
pub fn scale_fibers(t: &mut DenseTensor, mode: usize, factors: &[f64]) -> Result<()> {
    let (left, ext, right) = mode_split(&t.shape, mode)?;
    if factors.len() != left * right {
        return Err(invalid("one scale factor per fiber is required"));
    }
    for c in 0..right {
        let f = &factors[left * c..][..left];
        for b in 0..ext {
            let dst = &mut t.data[left * (b + ext * c)..][..left];
            for (d, s) in dst.iter_mut().zip(f) {
                *d *= s;
            }
        }
    }
    Ok(())
}

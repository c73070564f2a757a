//! Dense tensor containers and the numeric kernels every other module
//! consumes.
//!
//! Tensors are row-major (last extent contiguous) and store either `f32`
//! or `f64` values. All statistics kernels accumulate in 64-bit floating
//! point regardless of the storage width so that fitted quantities are
//! reproducible.

pub mod fft;
pub mod linalg;
pub mod metric;
pub mod rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, data has {got}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("extent product overflows")]
    ExtentOverflow,
    #[error("expected rank {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{op}: input contains non-finite values")]
    NonFinite { op: &'static str },
    #[error("{op}: no convergence after {iterations} iterations")]
    NotConverged { op: &'static str, iterations: usize },
    #[error("matrix not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("covariance not symmetric at ({row},{col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("{op}: zero-norm vector")]
    ZeroVector { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("extent {extent} is not a power of two")]
    NotPowerOfTwo { extent: usize },
    #[error("matrix must have rows <= cols, got {rows}x{cols}")]
    WideMatrixRequired { rows: usize, cols: usize },
}

/// Element storage width of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// N-dimensional dense numeric array, row-major.
///
/// The universal carrier for volumes, feature maps, masks and model
/// parameters. `product(shape) == len()` always holds; a rank-0 tensor
/// holds exactly one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Storage,
}

fn checked_len(shape: &[usize]) -> Result<usize, TensorError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or(TensorError::ExtentOverflow)
}

impl Tensor {
    pub fn zeros(shape: &[usize], dtype: DType) -> Tensor {
        let len = checked_len(shape).expect("extent product overflows");
        let data = match dtype {
            DType::F32 => Storage::F32(vec![0.0; len]),
            DType::F64 => Storage::F64(vec![0.0; len]),
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Result<Tensor, TensorError> {
        let expected = checked_len(shape)?;
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Storage::F32(data),
        })
    }

    pub fn from_f64(shape: &[usize], data: Vec<f64>) -> Result<Tensor, TensorError> {
        let expected = checked_len(shape)?;
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Storage::F64(data),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        match &self.data {
            Storage::F32(v) => v.len(),
            Storage::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match &self.data {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
        }
    }

    /// Value at linear (row-major) offset, widened to f64.
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        match &self.data {
            Storage::F32(v) => v[i] as f64,
            Storage::F64(v) => v[i],
        }
    }

    /// Store a value at a linear offset, narrowing to the tensor dtype.
    #[inline]
    pub fn set_value(&mut self, i: usize, x: f64) {
        match &mut self.data {
            Storage::F32(v) => v[i] = x as f32,
            Storage::F64(v) => v[i] = x,
        }
    }

    /// Row-major linear offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &e) in idx.iter().zip(&self.shape) {
            debug_assert!(*i < e);
            off = off * e + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.value(self.offset(idx))
    }

    pub fn iter_f64(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.value(i))
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Storage::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Storage::F64(v) => v.clone(),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Storage::F32(v) => Some(v),
            Storage::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            Storage::F64(v) => Some(v),
            Storage::F32(_) => None,
        }
    }

    pub fn as_f32_mut(&mut self) -> Option<&mut [f32]> {
        match &mut self.data {
            Storage::F32(v) => Some(v),
            Storage::F64(_) => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        match &self.data {
            Storage::F32(v) => v.iter().all(|x| x.is_finite()),
            Storage::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Largest absolute element difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        let mut m = 0.0f64;
        for i in 0..self.len() {
            m = m.max((self.value(i) - other.value(i)).abs());
        }
        m
    }

    /// Raw little-endian element bytes, used for fingerprints.
    pub fn le_bytes(&self) -> Vec<u8> {
        match &self.data {
            Storage::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Storage::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// Complex-valued tensor, the frequency-domain carrier for k-space
/// corruptions. Real and imaginary parts are stored as separate f64
/// planes of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn zeros(shape: &[usize]) -> ComplexTensor {
        let len = checked_len(shape).expect("extent product overflows");
        ComplexTensor {
            shape: shape.to_vec(),
            re: vec![0.0; len],
            im: vec![0.0; len],
        }
    }

    pub fn new(shape: &[usize], re: Vec<f64>, im: Vec<f64>) -> Result<ComplexTensor, TensorError> {
        let expected = checked_len(shape)?;
        if re.len() != expected || im.len() != expected {
            return Err(TensorError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                got: re.len().max(im.len()),
            });
        }
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            re,
            im,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Sum of squared magnitudes (spectral energy).
    pub fn energy(&self) -> f64 {
        let mut e = 0.0;
        for i in 0..self.re.len() {
            e += self.re[i] * self.re[i] + self.im[i] * self.im[i];
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank0_tensor_is_a_scalar() {
        let t = Tensor::from_f64(&[], vec![4.5]).unwrap();
        assert_eq!(t.rank(), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t.value(0), 4.5);
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::from_f32(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn extent_overflow_rejected() {
        let huge = [usize::MAX, 2];
        assert!(matches!(
            Tensor::from_f32(&huge, vec![]),
            Err(TensorError::ExtentOverflow)
        ));
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::from_f64(&[2, 3, 4], (0..24).map(|x| x as f64).collect()).unwrap();
        assert_eq!(t.get(&[0, 0, 0]), 0.0);
        assert_eq!(t.get(&[0, 0, 3]), 3.0);
        assert_eq!(t.get(&[0, 1, 0]), 4.0);
        assert_eq!(t.get(&[1, 0, 0]), 12.0);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
    }
}

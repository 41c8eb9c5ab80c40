//! Dense row-major tensors and generalized index contraction.
//!
//! Every linear map in the crate (blocking, DCT basis, zigzag, quantization,
//! the composed JPEG maps, convolution maps, the harmonic mixing tensor) is a
//! [`DenseTensor`], and every Einstein summation is a call to [`contract`].
//! Contraction permutes both operands so that the paired axes meet in the
//! middle and then runs a single GEMM.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type tag, shared with the weight file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element of a [`DenseTensor`].
pub trait Scalar:
    Float + AddAssign + MulAssign + Debug + Default + Send + Sync + 'static
{
    const DTYPE: DType;

    fn from_real(v: f64) -> Self;
    fn to_real(self) -> f64;

    /// `c = a · b (+ c if accumulate)` for contiguous row-major matrices,
    /// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self], accumulate: bool);
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn from_real(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_real(self) -> f64 {
                self as f64
            }

            fn gemm(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self], accumulate: bool) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the slices cover the full row-major extents asserted above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        k as isize,
                        1,
                        b.as_ptr(),
                        n as isize,
                        1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, DType::F32, matrixmultiply::sgemm);
impl_scalar!(f64, DType::F64, matrixmultiply::dgemm);

/// Row-major dense tensor. Immutable in spirit: operations return new
/// tensors, the mutable accessors exist for builders.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::RankError("tensor rank must be at least 1".into()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::ShapeMismatch(format!("extent of axis {axis} is zero in {shape:?}")));
    }
    Ok(shape.iter().product())
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {len} elements but {} were given",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(DenseTensor { shape: shape.to_vec(), data: vec![T::zero(); len] })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(DenseTensor { shape: shape.to_vec(), data })
    }

    /// `n × n` identity matrix.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * e + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Row-major reinterpretation under a new shape; no element moves.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(self, new_shape: &[usize]) -> Result<Self> {
        let len = check_shape(new_shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) into {new_shape:?} ({len} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(DenseTensor { shape: new_shape.to_vec(), data: self.data })
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        if axes.len() != rank {
            return Err(Error::RankError(format!("permutation {axes:?} for rank {rank}")));
        }
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::RankError(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return Ok(self.clone());
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides = row_major_strides(&self.shape);
        let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        // The innermost axis is walked as a strided run.
        let inner = rank - 1;
        let inner_len = new_shape[inner];
        let inner_stride = strides[inner];
        let outer: usize = new_shape[..inner].iter().product();
        let mut idx = vec![0usize; inner];
        for _ in 0..outer {
            let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.extend((0..inner_len).map(|j| self.data[base + j * inner_stride]));
            for axis in (0..inner).rev() {
                idx[axis] += 1;
                if idx[axis] < new_shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(DenseTensor { shape: new_shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseTensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Converts the element type through `f64`.
    pub fn cast<U: Scalar>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_real(v.to_real())).collect(),
        }
    }

    /// Like [`cast`](Self::cast), but reuses the buffer when `U` is `T`.
    pub fn into_cast<U: Scalar>(self) -> DenseTensor<U> {
        let data: Box<dyn std::any::Any> = Box::new(self.data);
        match data.downcast::<Vec<U>>() {
            Ok(same) => DenseTensor { shape: self.shape, data: *same },
            Err(other) => {
                let other = other.downcast::<Vec<T>>().expect("buffer holds T");
                DenseTensor { shape: self.shape, data: other.iter().map(|&v| U::from_real(v.to_real())).collect() }
            }
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(DenseTensor { shape: self.shape.clone(), data })
    }

    /// Largest absolute elementwise difference, computed in `f64`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_real() - b.to_real()).abs())
            .fold(0.0, f64::max))
    }
}

/// Generalized contraction: sums over each `(axis_of_a, axis_of_b)` pair.
///
/// The result carries the free axes of `a` in order followed by the free
/// axes of `b` in order. A full contraction yields shape `[1]`.
pub fn contract<T: Scalar>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
    pairing: &[(usize, usize)],
) -> Result<DenseTensor<T>> {
    let mut paired_a = vec![false; a.rank()];
    let mut paired_b = vec![false; b.rank()];
    for &(i, j) in pairing {
        if i >= a.rank() {
            return Err(Error::RankError(format!("axis {i} out of range for rank {}", a.rank())));
        }
        if j >= b.rank() {
            return Err(Error::RankError(format!("axis {j} out of range for rank {}", b.rank())));
        }
        if paired_a[i] || paired_b[j] {
            return Err(Error::RankError(format!("axis repeated in pairing {pairing:?}")));
        }
        paired_a[i] = true;
        paired_b[j] = true;
        if a.shape[i] != b.shape[j] {
            return Err(Error::ShapeMismatch(format!(
                "paired axes ({i},{j}) have extents {} and {}",
                a.shape[i], b.shape[j]
            )));
        }
    }

    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !paired_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&j| !paired_b[j]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(pairing.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = pairing.iter().map(|p| p.1).collect();
    perm_b.extend(&free_b);

    let a_p = a.permute(&perm_a)?;
    let b_p = b.permute(&perm_b)?;

    let m: usize = free_a.iter().map(|&i| a.shape[i]).product();
    let k: usize = pairing.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&j| b.shape[j]).product();

    let mut out_shape: Vec<usize> = free_a.iter().map(|&i| a.shape[i]).collect();
    out_shape.extend(free_b.iter().map(|&j| b.shape[j]));
    if out_shape.is_empty() {
        out_shape.push(1);
    }

    let mut data = vec![T::zero(); m * n];
    T::gemm(m, k, n, &a_p.data, &b_p.data, &mut data, false);
    Ok(DenseTensor { shape: out_shape, data })
}

/// Reshape as a free function, mirroring [`contract`].
pub fn reshape<T: Scalar>(a: &DenseTensor<T>, new_shape: &[usize]) -> Result<DenseTensor<T>> {
    a.reshape(new_shape)
}

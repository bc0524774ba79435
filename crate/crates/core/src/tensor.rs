//! Dense row-major tensors and the batch reductions the views are built from.
//!
//! Weights use the `[w, w, c, f]` layout (window rows, window columns, input
//! channels, filters) and activations `[b, m, m, f]` (sample, row, column,
//! filter). The last axis is always the contiguous one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_finite<T: Scalar>(data: &[T], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Rank-4 tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "tensor {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        check_finite(&data, "tensor")?;
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    /// Builds a tensor from a function of its index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                for c in 0..shape[2] {
                    for d in 0..shape[3] {
                        data.push(f([a, b, c, d]));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    /// Constructor for kernels that already validated their output length.
    pub(crate) fn from_raw(shape: [usize; 4], data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Tensor4 { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, [a, b, c, d]: [usize; 4]) -> usize {
        let [_, s1, s2, s3] = self.shape;
        ((a * s1 + b) * s2 + c) * s3 + d
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Contiguous samples `range` along the first axis.
    pub fn slice_outer(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.shape[0] {
            return Err(Error::Index {
                what: "outer axis",
                index: range.end,
                len: self.shape[0],
            });
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape;
        shape[0] = range.len();
        Ok(Tensor4::from_raw(
            shape,
            self.data[range.start * stride..range.end * stride].to_vec(),
        ))
    }

    /// Concatenation along the first (batch) axis.
    pub fn concat_outer(&self, other: &Self) -> Result<Self> {
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::shape(format!(
                "cannot concatenate {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut shape = self.shape;
        shape[0] += other.shape[0];
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor4::from_raw(shape, data))
    }
}

/// Rank-3 tensor, `[m, m, f]` for batch-summed feature maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<T> {
    shape: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(shape: [usize; 3], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape(format!(
                "tensor {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        check_finite(&data, "tensor")?;
        Ok(Tensor3 { shape, data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Tensor3 {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                for c in 0..shape[2] {
                    data.push(f([a, b, c]));
                }
            }
        }
        Tensor3 { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, [a, b, c]: [usize; 3]) -> T {
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    /// Number of planes along the last axis.
    pub fn planes(&self) -> usize {
        self.shape[2]
    }

    /// Row-major flattening of plane `k`: `out[i * cols + j] = self[i, j, k]`.
    pub fn window(&self, k: usize) -> Result<Vec<T>> {
        let [rows, cols, f] = self.shape;
        if k >= f {
            return Err(Error::Index {
                what: "filter",
                index: k,
                len: f,
            });
        }
        Ok((0..rows * cols).map(|p| self.data[p * f + k]).collect())
    }

    /// Largest element, or zero for an empty tensor.
    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }
}

/// Row-major matrix; dense-layer weights are stored `[inputs, units]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Sums a `[b, m, m, f]` activation batch pixel by pixel into `[m, m, f]`.
pub fn batch_sum<T: Scalar>(acts: &Tensor4<T>) -> Result<Tensor3<T>> {
    let [b, h, w, f] = acts.shape();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let plane = h * w * f;
    let mut out = acts.data()[..plane].to_vec();
    for sample in acts.data()[plane..].chunks_exact(plane) {
        for (o, &v) in out.iter_mut().zip(sample) {
            *o = *o + v;
        }
    }
    Ok(Tensor3 {
        shape: [h, w, f],
        data: out,
    })
}

/// Row-major flattening of the `k`-th feature map.
pub fn flatten_window<T: Scalar>(map: &Tensor3<T>, k: usize) -> Result<Vec<T>> {
    map.window(k)
}

/// Scales non-negative values into `[0, 1]` by `max_abs`.
pub fn normalize_unit<T: Scalar>(v: &[T], max_abs: T) -> Result<Vec<T>> {
    if !(max_abs > T::zero()) || !max_abs.is_finite() {
        return Err(Error::DegenerateScale(max_abs.as_f64()));
    }
    Ok(v.iter().map(|&x| x / max_abs).collect())
}

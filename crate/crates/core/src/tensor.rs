//! Dense batch tensors used by the layers.

use crate::error::{Error, Result};
use crate::quat::QTensor;
use crate::scalar::Scalar;

/// Batch of feature maps in `N × C × H × W` row-major order.
///
/// A quaternion map with `q` channels occupies `C = 4q` real channels in
/// plane-major order: real channel `p·q + m` is component `p` of quaternion
/// channel `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![T::zero(); n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::shape(format!(
                "tensor {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Stacks quaternion maps of equal shape into a batch.
    pub fn from_quaternions(items: &[QTensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("empty batch"))?;
        let (q, h, w) = first.shape();
        let mut data = Vec::with_capacity(items.len() * 4 * q * h * w);
        for it in items {
            if it.shape() != (q, h, w) {
                return Err(Error::shape("quaternion maps in a batch must share a shape"));
            }
            data.extend_from_slice(it.as_slice());
        }
        Self::from_vec(items.len(), 4 * q, h, w, data)
    }

    /// Item `b` viewed as a quaternion map (requires `C % 4 == 0`).
    pub fn quaternion_item(&self, b: usize) -> Result<QTensor<T>> {
        if self.c % 4 != 0 {
            return Err(Error::shape(format!("{} channels is not a quaternion map", self.c)));
        }
        QTensor::from_vec(self.c / 4, self.h, self.w, self.item(b).to_vec())
    }

    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn item(&self, b: usize) -> &[T] {
        let l = self.item_len();
        &self.data[b * l..(b + 1) * l]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[b * l..(b + 1) * l]
    }

    /// Spatial plane of item `b`, channel `c`.
    pub fn channel(&self, b: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let off = (b * self.c + c) * p;
        &self.data[off..off + p]
    }

    pub fn channel_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let off = (b * self.c + c) * p;
        &mut self.data[off..off + p]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    /// Rows `[start, end)` of the batch.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let l = self.item_len();
        Self {
            n: end - start,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data[start * l..end * l].to_vec(),
        }
    }

    /// Gathers the listed items into a new batch.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Self { n: indices.len(), c: self.c, h: self.h, w: self.w, data }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Row-major `rows × cols` matrix; one row per batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Activation flowing between layers: spatial maps or flat feature rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Act<T> {
    Spatial(Tensor4<T>),
    Flat(Matrix<T>),
}

impl<T: Scalar> Act<T> {
    pub fn batch(&self) -> usize {
        match self {
            Act::Spatial(t) => t.n,
            Act::Flat(m) => m.rows,
        }
    }

    pub fn values(&self) -> &[T] {
        match self {
            Act::Spatial(t) => &t.data,
            Act::Flat(m) => &m.data,
        }
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        match self {
            Act::Spatial(t) => &mut t.data,
            Act::Flat(m) => &mut m.data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Act::Spatial(t) => Act::Spatial(Tensor4::zeros(t.n, t.c, t.h, t.w)),
            Act::Flat(m) => Act::Flat(Matrix::zeros(m.rows, m.cols)),
        }
    }

    pub fn spatial(&self) -> Result<&Tensor4<T>> {
        match self {
            Act::Spatial(t) => Ok(t),
            Act::Flat(_) => Err(Error::shape("expected a spatial activation, found flat features")),
        }
    }

    pub fn flat(&self) -> Result<&Matrix<T>> {
        match self {
            Act::Flat(m) => Ok(m),
            Act::Spatial(_) => Err(Error::shape("expected flat features, found a spatial map")),
        }
    }

    pub fn into_spatial(self) -> Result<Tensor4<T>> {
        match self {
            Act::Spatial(t) => Ok(t),
            Act::Flat(_) => Err(Error::shape("expected a spatial activation, found flat features")),
        }
    }

    pub fn into_flat(self) -> Result<Matrix<T>> {
        match self {
            Act::Flat(m) => Ok(m),
            Act::Spatial(_) => Err(Error::shape("expected flat features, found a spatial map")),
        }
    }
}

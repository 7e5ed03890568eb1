//! Dense row-major tensors and the bulk kernels the rest of the crate uses.

mod conv;
mod scalar;

pub use conv::{conv2d, conv2d_grad_input, conv2d_grad_weight, Conv2d};
pub use scalar::{Dual, Scalar};

use crate::error::{Error, Result};

/// A dense, row-major array with shape metadata.
///
/// The shape never contains a zero dimension and `data.len()` always equals
/// the product of the shape. Scalars are represented with shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Argument(format!(
            "tensor shape must be non-empty with positive dimensions, got {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, rejecting inconsistent lengths and non-finite data.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let t = Self::from_parts(shape.into(), data)?;
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(Error::Argument(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernels whose output length is correct by
    /// construction.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        check_shape(&shape).expect("invalid tensor shape");
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
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

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per batch entry.
    pub fn example_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn example(&self, i: usize) -> &[T] {
        let d = self.example_len();
        &self.data[i * d..(i + 1) * d]
    }

    /// Primal values as `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.primal()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.primal())).collect(),
        }
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        if numel(&shape) != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
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
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let f = T::from_f64(factor);
        self.map(|v| v * f)
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("axpy", &self.shape, &other.shape));
        }
        let f = T::from_f64(factor);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += f * b;
        }
        Ok(())
    }

    /// Elementwise sign with `sign(0) = 0` and no dead zone around zero.
    pub fn sign(&self) -> Result<Self> {
        self.check_finite("sign")?;
        Ok(self.map(|v| {
            let p = v.primal();
            T::from_f64(if p > 0.0 {
                1.0
            } else if p < 0.0 {
                -1.0
            } else {
                0.0
            })
        }))
    }

    /// Elementwise projection onto `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!(
                "clamp bounds must be finite, got [{lo}, {hi}]"
            )));
        }
        if lo > hi {
            return Err(Error::Argument(format!("clamp with lo {lo} > hi {hi}")));
        }
        self.check_finite("clamp")?;
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        Ok(self.map(|v| {
            if v.primal() < lo {
                l
            } else if v.primal() > hi {
                h
            } else {
                v
            }
        }))
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        self.check_finite("dot")?;
        other.check_finite("dot")?;
        Ok(dot_slices(&self.data, &other.data))
    }

    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// `max |x_i|` over primal values.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.primal().abs())
            .fold(0.0, f64::max)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            (m, k, n),
            &self.data,
            (k, 1),
            &other.data,
            (n, 1),
            &mut out,
            (n, 1),
            false,
        );
        Ok(Tensor::from_raw(vec![m, n], out))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::Argument(format!(
                "transpose needs a 2-D tensor, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Tensor::from_raw(vec![c, r], out))
    }

    /// Gathers batch entries (leading-axis slices) by index.
    pub fn select_batch(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Argument("empty batch selection".into()));
        }
        let d = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::Argument(format!(
                    "batch index {i} out of range for {} entries",
                    self.shape[0]
                )));
            }
            data.extend_from_slice(self.example(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Tensor { shape, data })
    }

    /// Per-example inner products of two tensors with the same batch layout.
    pub fn batch_dot(&self, other: &Self) -> Result<Vec<T>> {
        if self.shape != other.shape {
            return Err(Error::shape("batch_dot", &self.shape, &other.shape));
        }
        let d = self.example_len();
        Ok(self
            .data
            .chunks(d)
            .zip(other.data.chunks(d))
            .map(|(a, b)| dot_slices(a, b))
            .collect())
    }
}

pub(crate) fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

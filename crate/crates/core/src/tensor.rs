//! Dense row-major `f64` tensor.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Dense n-dimensional array of `f64`, row-major with the last axis
/// contiguous. The shape is fixed at construction; element values may be
/// mutated in place through [`Tensor::data_mut`].
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape { shape: shape.to_vec(), reason: "dimensions must be positive".into() });
    }
    Ok(shape.iter().product())
}

/// Binary elementwise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: alloc::format!("expected {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; n] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() })
    }

    /// Samples every element from `U(lo, hi)` in row-major order.
    pub fn uniform<R: RandomSource + ?Sized>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Invalid(alloc::format!("uniform bounds require lo < hi, got [{lo}, {hi})")));
        }
        Self::from_fn(shape, |_| rng.uniform(lo, hi))
    }

    /// Zeros with the same shape; never fails because the shape is valid.
    pub fn zeros_like(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: vec![0.0; self.data.len()] }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data })
    }

    pub fn zip_with(&self, other: &Tensor, op: BinaryOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op.name(), &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| op.apply(a, b)).collect(),
        })
    }

    pub fn scalar_op(&self, scalar: f64, op: BinaryOp) -> Tensor {
        self.map(|a| op.apply(a, scalar))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, BinaryOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, BinaryOp::Div)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.scalar_op(factor, BinaryOp::Mul)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&a| f(a)).collect() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("axpy", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Mean over the axes in `dims`; reduced axes are kept with size 1.
    /// An empty axis set returns the input unchanged.
    pub fn reduce_mean(&self, dims: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &d in dims {
            if d >= rank {
                return Err(Error::InvalidAxis { axis: d, rank });
            }
            reduced[d] = true;
        }
        let out_shape: Vec<usize> = self.shape.iter().zip(&reduced).map(|(&s, &r)| if r { 1 } else { s }).collect();
        let out_len: usize = out_shape.iter().product();
        let count = self.data.len() / out_len;
        let mut out = vec![0.0; out_len];
        let strides = strides(&out_shape);
        let mut index = vec![0usize; rank];
        for &v in &self.data {
            let mut o = 0;
            for axis in 0..rank {
                if !reduced[axis] {
                    o += index[axis] * strides[axis];
                }
            }
            out[o] += v;
            increment(&mut index, &self.shape);
        }
        let inv = 1.0 / count as f64;
        for v in &mut out {
            *v *= inv;
        }
        Tensor::new(&out_shape, out)
    }

    /// `self - other` where `other` has the same rank and each of its
    /// dimensions equals the corresponding one in `self` or is 1.
    pub fn broadcast_sub(&self, other: &Tensor) -> Result<Tensor> {
        if other.rank() != self.rank() || self.shape.iter().zip(&other.shape).any(|(&a, &b)| b != a && b != 1) {
            return Err(Error::shape("broadcast_sub", &self.shape, &other.shape));
        }
        let ostrides = strides(&other.shape);
        let rank = self.rank();
        let mut index = vec![0usize; rank];
        let mut data = Vec::with_capacity(self.data.len());
        for &v in &self.data {
            let mut o = 0;
            for axis in 0..rank {
                if other.shape[axis] != 1 {
                    o += index[axis] * ostrides[axis];
                }
            }
            data.push(v - other.data[o]);
            increment(&mut index, &self.shape);
        }
        Tensor::new(&self.shape, data)
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    libm::sqrt(values.iter().map(|v| v * v).sum::<f64>())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn increment(index: &mut [usize], shape: &[usize]) {
    for axis in (0..shape.len()).rev() {
        index[axis] += 1;
        if index[axis] < shape[axis] {
            return;
        }
        index[axis] = 0;
    }
}

/// Row-major GEMM, `c = alpha * op(a) * op(b) + beta * c`, where `op`
/// transposes when the flag is set. `a` is `m x k` after `op`, `b` is
/// `k x n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover m*k, k*n and m*n elements (asserted above in
    // debug builds, guaranteed by every caller) and the strides describe
    // exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value type: a shape plus row-major data. Gradient
//! tracking lives on the [`Tape`]: leaves are registered with a
//! `requires_grad` flag, every operation records the backward rule it needs,
//! and one reverse sweep populates a gradient per reachable leaf.
//!
//! Production code runs at `f32`; the same kernels instantiate at `f64` so the
//! finite-difference oracle in [`gradcheck`] can probe the identical math at
//! high precision.

mod gradcheck;
mod kernels;
mod tape;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GraphBuilder};
pub use tape::{BnConfig, BnMode, BnRunning, NodeId, Tape};

use crate::error::{Error, Result};

/// Element type the tensor kernels are generic over.
///
/// `f32` is the production type (with a matrixmultiply-backed GEMM); `f64`
/// exists for the finite-difference oracle.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;

    /// `c := alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// `a` is m×k, `b` is k×n, `c` is m×n. Strides are in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
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
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn of_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }

    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
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
                rsc,
                csc,
            );
        }
    }
}

/// Dense N-dimensional array with row-major storage.
///
/// Shapes follow the NCHW convention where four axes are involved.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new (zero dimension)".into(),
                expected: vec![],
                got: shape,
            });
        }
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                context: format!("Tensor::new (data length {})", data.len()),
                expected: vec![numel],
                got: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element at `[n, c, h, w]` of a rank-4 tensor. Test and tooling helper.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        let [_, cs, hs, ws] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of_f64(v.as_f64())).collect(),
        }
    }
}

impl Tensor<f32> {
    /// Exact bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Tensor<f32>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn check_same_shape<S: Scalar>(
    context: &str,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: context.into(),
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

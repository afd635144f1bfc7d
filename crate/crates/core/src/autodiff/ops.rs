//! Convenience builders over the op catalog, plus a few composites
//! (negation, absolute value, positive reciprocal) assembled from it.

use crate::error::Result;
use crate::scalar::Scalar;

use super::tape::{OpKind, Tape};
use super::tensor::Tensor;

pub fn add<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Add, &[a, b])
}

pub fn sub<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Sub, &[a, b])
}

pub fn mul<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Mul, &[a, b])
}

pub fn matmul<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::MatMul, &[a, b])
}

pub fn tanh<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Tanh, &[a])
}

pub fn relu<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Relu, &[a])
}

pub fn exp<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Exp, &[a])
}

pub fn log<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Log, &[a])
}

pub fn square<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Square, &[a])
}

pub fn sqrt<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Sqrt, &[a])
}

pub fn sum<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Sum, &[a])
}

pub fn mean<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    t.apply(OpKind::Mean, &[a])
}

pub fn concat<S: Scalar>(t: &mut Tape<S>, parts: &[&Tensor<S>], shape: Vec<usize>) -> Result<Tensor<S>> {
    t.apply(OpKind::Concat { shape }, parts)
}

/// Contiguous row-major range viewed under `shape`.
pub fn slice<S: Scalar>(
    t: &mut Tape<S>,
    a: &Tensor<S>,
    start: usize,
    end: usize,
    shape: Vec<usize>,
) -> Result<Tensor<S>> {
    t.apply(OpKind::Slice { start, end, shape }, &[a])
}

/// Reshape without moving values (full-range slice).
pub fn reshape<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, shape: Vec<usize>) -> Result<Tensor<S>> {
    let n = a.numel();
    slice(t, a, 0, n, shape)
}

pub fn scalar_broadcast<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, shape: Vec<usize>) -> Result<Tensor<S>> {
    t.apply(OpKind::ScalarBroadcast { shape }, &[a])
}

pub fn clamp<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, lo: S, hi: S) -> Result<Tensor<S>> {
    t.apply(OpKind::Clamp { lo, hi }, &[a])
}

/// Multiply by a constant scalar.
pub fn scale<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
    let k = Tensor::full(a.shape().to_vec(), c);
    mul(t, a, &k)
}

/// Add a constant scalar to every element.
pub fn offset<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
    let k = Tensor::full(a.shape().to_vec(), c);
    add(t, a, &k)
}

pub fn neg<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    scale(t, a, -S::one())
}

/// |x| built as relu(x) + relu(-x); subgradient 0 at the origin.
pub fn abs<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    let p = relu(t, a)?;
    let n = neg(t, a)?;
    let n = relu(t, &n)?;
    add(t, &p, &n)
}

/// Elementwise 1/x for strictly positive x, via exp(-log(x)).
pub fn recip_pos<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>) -> Result<Tensor<S>> {
    let l = log(t, a)?;
    let nl = neg(t, &l)?;
    exp(t, &nl)
}

/// Euclidean norm of each row of an N x k matrix, with a small positive
/// shift inside the square root so the gradient stays defined at zero.
pub fn row_norms<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, eps: S) -> Result<Tensor<S>> {
    let k = a.shape()[1];
    let sq = square(t, a)?;
    let ones = Tensor::full(vec![k, 1], S::one());
    let sums = matmul(t, &sq, &ones)?;
    let shifted = offset(t, &sums, eps)?;
    sqrt(t, &shifted)
}

/// Sum of squared differences between two same-shape tensors.
pub fn sq_dist<S: Scalar>(t: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let d = sub(t, a, b)?;
    let s = square(t, &d)?;
    sum(t, &s)
}

/// Broadcast a row vector [1,n] over m rows.
pub fn tile_rows<S: Scalar>(t: &mut Tape<S>, row: &Tensor<S>, m: usize) -> Result<Tensor<S>> {
    let ones = Tensor::full(vec![m, 1], S::one());
    matmul(t, &ones, row)
}

/// Broadcast a column vector [m,1] over n columns.
pub fn tile_cols<S: Scalar>(t: &mut Tape<S>, col: &Tensor<S>, n: usize) -> Result<Tensor<S>> {
    let ones = Tensor::full(vec![1, n], S::one());
    matmul(t, col, &ones)
}

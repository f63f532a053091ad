//! Plain numeric kernels behind the tape primitives.

use crate::autodiff::{AutodiffError, Tensor};
use crate::scalar::Scalar;

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    // Branch keeps exp() from overflowing for large |x|.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Same-shape elementwise op, or scalar-with-tensor broadcast.
pub(crate) fn elementwise<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, AutodiffError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    } else if b.len() == 1 {
        let y = b.data()[0];
        Ok(a.map(|x| f(x, y)))
    } else if a.len() == 1 {
        let x = a.data()[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(mismatch(op, a, b))
    }
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, AutodiffError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(mismatch("matmul", a, b));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    Tensor::new(vec![m, n], matmul_nn(a.data(), b.data(), m, k, n))
}

/// `(m, k) x (k, n)`.
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&a_ip, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    out
}

/// `(m, n) x (k, n)^T` -> `(m, k)`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for (a_row, out_row) in a.chunks_exact(n).zip(out.chunks_exact_mut(k)) {
        for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(n)) {
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    }
    out
}

/// `(m, k)^T x (m, n)` -> `(k, n)`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for (a_row, b_row) in a.chunks_exact(k).zip(b.chunks_exact(n)).take(m) {
        for (&a_ip, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            for (o, &b_ij) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
    out
}

pub(crate) fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let cols = x.cols();
    let mut data = Vec::with_capacity(x.len());
    for row in x.data().chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        data.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub(crate) fn log_softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let cols = x.cols();
    let mut data = Vec::with_capacity(x.len());
    for row in x.data().chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        data.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub(crate) fn norm_last_axis<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let cols = x.cols();
    let data: Vec<T> = x
        .data()
        .chunks(cols)
        .map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect();
    let mut shape = x.shape()[..x.shape().len() - 1].to_vec();
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::new(shape, data).expect("norm output shape")
}

/// `(outer, dim, inner)` factorization of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, AutodiffError> {
    let first = parts[0];
    let rank = first.shape().len();
    if axis >= rank {
        return Err(AutodiffError::Axis {
            op: "concat",
            axis,
            shape: first.shape().to_vec(),
        });
    }
    let mut total = 0;
    for p in parts {
        let compatible = p.shape().len() == rank
            && p
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(mismatch("concat", first, p));
        }
        total += p.shape()[axis];
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(shape, data)
}

/// Inverse of [`concat`] for gradients.
pub(crate) fn split<T: Scalar>(dy: &[T], out_shape: &[usize], shapes: &[&[usize]], axis: usize) -> Vec<Vec<T>> {
    let (outer, total, inner) = split_axis(out_shape, axis);
    let mut grads: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    for o in 0..outer {
        let mut offset = o * total * inner;
        for (g, s) in grads.iter_mut().zip(shapes) {
            let block = s[axis] * inner;
            g.extend_from_slice(&dy[offset..offset + block]);
            offset += block;
        }
    }
    grads
}

pub(crate) fn slice<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>, AutodiffError> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(AutodiffError::Axis {
            op: "slice",
            axis,
            shape: shape.to_vec(),
        });
    }
    if start >= end || end > shape[axis] {
        return Err(AutodiffError::SliceRange {
            start,
            end,
            shape: shape.to_vec(),
            axis,
        });
    }
    let (outer, dim, inner) = split_axis(shape, axis);
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * dim * inner;
        data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = end - start;
    Tensor::new(out_shape, data)
}

/// Scatters a slice gradient back into a zero tensor of the input shape.
pub(crate) fn unslice<T: Scalar>(dy: &[T], out_shape: &[usize], in_shape: &[usize], axis: usize, start: usize) -> Vec<T> {
    let (outer, dim, inner) = split_axis(in_shape, axis);
    let width = out_shape[axis] * inner;
    let mut grad = vec![T::zero(); in_shape.iter().product()];
    for o in 0..outer {
        let base = o * dim * inner + start * inner;
        grad[base..base + width].copy_from_slice(&dy[o * width..(o + 1) * width]);
    }
    grad
}

pub(crate) fn tile_rows<T: Scalar>(x: &Tensor<T>, count: usize) -> Result<Tensor<T>, AutodiffError> {
    if x.shape().len() != 2 || x.rows() != 1 || count == 0 {
        return Err(AutodiffError::ShapeMismatch {
            op: "tile_rows",
            left: x.shape().to_vec(),
            right: vec![count, x.cols()],
        });
    }
    let mut data = Vec::with_capacity(count * x.len());
    for _ in 0..count {
        data.extend_from_slice(x.data());
    }
    Tensor::new(vec![count, x.cols()], data)
}

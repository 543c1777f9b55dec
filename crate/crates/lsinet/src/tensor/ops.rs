//! Forward op builders. Each op validates shapes, computes the result, and
//! records the graph edge when gradients are enabled.
//!
//! Broadcasting is deliberately narrow: operand shapes must be equal, or one
//! operand must be a one-element scalar or a trailing suffix of the other's
//! shape (the "leading batch dims" case). Anything else is a shape error.

use std::rc::Rc;

use super::backward::Op;
use super::{grad_enabled, Scalar, Tensor};
use crate::error::{Error, Result};

/// How two elementwise operands line up. `small` is tiled over `big` by
/// indexing modulo its length, which matches row-major suffix semantics.
fn broadcast_layout(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, bool, bool)> {
    fn numel(s: &[usize]) -> usize {
        s.iter().product()
    }
    fn is_suffix(small: &[usize], big: &[usize]) -> bool {
        small.len() <= big.len() && &big[big.len() - small.len()..] == small
    }
    if a == b {
        return Ok((a.to_vec(), false, false));
    }
    if numel(b) == 1 || is_suffix(b, a) {
        return Ok((a.to_vec(), false, true));
    }
    if numel(a) == 1 || is_suffix(a, b) {
        return Ok((b.to_vec(), true, false));
    }
    Err(Error::Shape(format!(
        "operands {a:?} and {b:?} are neither equal nor scalar/suffix broadcastable"
    )))
}

/// (outer, len, inner) strides for walking lanes along `axis`.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl<T: Scalar> Tensor<T> {
    fn unary(&self, data: Vec<T>, op: impl FnOnce(Tensor<T>) -> Op<T>) -> Tensor<T> {
        let rg = grad_enabled() && self.requires_grad();
        Tensor::new_node(self.0.shape.clone(), data, rg, rg.then(|| op(self.clone())))
    }

    fn binary(
        &self,
        rhs: &Tensor<T>,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(Tensor<T>, Tensor<T>) -> Op<T>,
    ) -> Result<Tensor<T>> {
        let (out_shape, a_small, b_small) = broadcast_layout(self.shape(), rhs.shape())?;
        let a = self.data();
        let b = rhs.data();
        let data: Vec<T> = if a_small {
            b.iter().enumerate().map(|(i, &bv)| f(a[i % a.len()], bv)).collect()
        } else if b_small {
            a.iter().enumerate().map(|(i, &av)| f(av, b[i % b.len()])).collect()
        } else {
            a.iter().zip(b.iter()).map(|(&av, &bv)| f(av, bv)).collect()
        };
        drop(a);
        drop(b);
        let rg = grad_enabled() && (self.requires_grad() || rhs.requires_grad());
        Ok(Tensor::new_node(
            out_shape,
            data,
            rg,
            rg.then(|| op(self.clone(), rhs.clone())),
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, |a, b| a + b, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, |a, b| a - b, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, |a, b| a * b, |a, b| Op::Mul { a, b })
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.max(T::zero())).collect();
        self.unary(data, |x| Op::Relu { x })
    }

    pub fn exp(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.exp()).collect();
        self.unary(data, |x| Op::Exp { x })
    }

    pub fn log(&self) -> Result<Tensor<T>> {
        if let Some(i) = self.data().iter().position(|&x| x <= T::zero()) {
            return Err(Error::Domain(format!(
                "log of non-positive value {} at flat index {i}",
                self.data()[i]
            )));
        }
        let data = self.data().iter().map(|&x| x.ln()).collect();
        Ok(self.unary(data, |x| Op::Log { x }))
    }

    pub fn neg(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| -x).collect();
        self.unary(data, |x| Op::Neg { x })
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x * c).collect();
        self.unary(data, |x| Op::Scale { x, c })
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x + c).collect();
        self.unary(data, |x| Op::AddScalar { x })
    }

    pub fn clamp(&self, lo: T, hi: T) -> Result<Tensor<T>> {
        if !(lo <= hi) {
            return Err(Error::Contract(format!("clamp range [{lo}, {hi}] is empty")));
        }
        let data = self.data().iter().map(|&x| x.max(lo).min(hi)).collect();
        Ok(self.unary(data, |x| Op::Clamp { x, lo, hi }))
    }

    /// Rounds to the nearest integer in the forward pass while the backward
    /// pass treats the op as identity (straight-through estimator).
    pub fn ste_round(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.round()).collect();
        self.unary(data, |x| Op::SteRound { x })
    }

    /// Softmax along `axis`, max-subtracted for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, len, inner) = axis_layout(self.shape(), axis);
        let x = self.data();
        let mut data = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut m = x[at(0)];
                for j in 1..len {
                    m = m.max(x[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (x[at(j)] - m).exp();
                    data[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[at(j)] /= sum;
                }
            }
        }
        drop(x);
        Ok(self.unary(data, |x| Op::Softmax { x, axis }))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().fold(T::zero(), |acc, &x| acc + x);
        let rg = grad_enabled() && self.requires_grad();
        Tensor::new_node(vec![1], vec![s], rg, rg.then(|| Op::SumAll { x: self.clone() }))
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel()).expect("tensor size fits scalar");
        self.sum_all().scale(T::one() / n)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::Shape(format!(
                "sum axis {axis} out of range for shape {:?}",
                self.shape()
            )));
        }
        let (outer, len, inner) = axis_layout(self.shape(), axis);
        let x = self.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += x[o * len * inner + j * inner + i];
                }
            }
        }
        drop(x);
        let mut out_shape: Vec<usize> = self.shape().to_vec();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = grad_enabled() && self.requires_grad();
        Ok(Tensor::new_node(
            out_shape,
            data,
            rg,
            rg.then(|| Op::SumAxis { x: self.clone(), axis }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let len = T::from_usize(self.shape()[axis.min(self.ndim() - 1)]).unwrap();
        Ok(self.sum_axis(axis)?.scale(T::one() / len))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) into {shape:?}",
                self.shape(),
                self.numel()
            )));
        }
        let rg = grad_enabled() && self.requires_grad();
        Ok(Tensor::new_node(
            shape.to_vec(),
            self.to_vec(),
            rg,
            rg.then(|| Op::Reshape { x: self.clone() }),
        ))
    }

    pub fn flatten(&self) -> Tensor<T> {
        self.reshape(&[self.numel()]).expect("flatten preserves size")
    }

    /// Swaps two axes (copying).
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        if a >= self.ndim() || b >= self.ndim() {
            return Err(Error::Shape(format!(
                "transpose axes ({a}, {b}) out of range for shape {:?}",
                self.shape()
            )));
        }
        let mut out_shape = self.shape().to_vec();
        out_shape.swap(a, b);
        let data = transpose_copy(&self.data(), self.shape(), a, b);
        let rg = grad_enabled() && self.requires_grad();
        Ok(Tensor::new_node(
            out_shape,
            data,
            rg,
            rg.then(|| Op::Transpose { x: self.clone(), a, b }),
        ))
    }

    /// Gathers rows along axis 0; gradients scatter-add back, so repeated
    /// indices accumulate.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if self.ndim() == 0 {
            return Err(Error::Shape("index_select needs at least 1 axis".into()));
        }
        let rows = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!(
                "index {bad} out of range for axis 0 of length {rows}"
            )));
        }
        let row_len: usize = self.shape()[1..].iter().product();
        let x = self.data();
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &i in indices {
            data.extend_from_slice(&x[i * row_len..(i + 1) * row_len]);
        }
        drop(x);
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = indices.len();
        let rg = grad_enabled() && self.requires_grad();
        let idx = Rc::new(indices.to_vec());
        Ok(Tensor::new_node(
            out_shape,
            data,
            rg,
            rg.then(|| Op::IndexSelect { x: self.clone(), indices: idx }),
        ))
    }

    /// Matrix product with optional leading batch dims on either operand:
    /// `[..B, m, k] x [k, n]`, `[m, k] x [..B, k, n]`, or equal batch dims.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (a_shape, b_shape) = (self.shape(), rhs.shape());
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(Error::Shape(format!(
                "matmul needs >= 2 dims, got {a_shape:?} x {b_shape:?}"
            )));
        }
        let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (kb, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        let batch_a = &a_shape[..a_shape.len() - 2];
        let batch_b = &b_shape[..b_shape.len() - 2];
        if ka != kb || !(batch_a.is_empty() || batch_b.is_empty() || batch_a == batch_b) {
            return Err(Error::Shape(format!(
                "matmul operands {a_shape:?} x {b_shape:?} are incompatible"
            )));
        }
        let k = ka;
        let ba: usize = batch_a.iter().product();
        let bb: usize = batch_b.iter().product();
        let lead: Vec<usize> = if batch_a.is_empty() { batch_b.to_vec() } else { batch_a.to_vec() };
        let batches = lead.iter().product::<usize>().max(1);
        let mut out_shape = lead.clone();
        out_shape.push(m);
        out_shape.push(n);

        let a = self.data();
        let b = rhs.data();
        let mut data = vec![T::zero(); batches * m * n];
        if batch_b.is_empty() {
            // One gemm over the folded batch of A.
            T::gemm(false, false, ba.max(1) * m, n, k, T::one(), &a, &b, T::zero(), &mut data);
        } else if batch_a.is_empty() {
            for i in 0..bb {
                T::gemm(
                    false,
                    false,
                    m,
                    n,
                    k,
                    T::one(),
                    &a,
                    &b[i * k * n..(i + 1) * k * n],
                    T::zero(),
                    &mut data[i * m * n..(i + 1) * m * n],
                );
            }
        } else {
            for i in 0..ba {
                T::gemm(
                    false,
                    false,
                    m,
                    n,
                    k,
                    T::one(),
                    &a[i * m * k..(i + 1) * m * k],
                    &b[i * k * n..(i + 1) * k * n],
                    T::zero(),
                    &mut data[i * m * n..(i + 1) * m * n],
                );
            }
        }
        drop(a);
        drop(b);
        let rg = grad_enabled() && (self.requires_grad() || rhs.requires_grad());
        Ok(Tensor::new_node(
            out_shape,
            data,
            rg,
            rg.then(|| Op::Matmul { a: self.clone(), b: rhs.clone() }),
        ))
    }
}

/// Concatenates along `axis`; all other dims must agree.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let ndim = first.ndim();
    if axis >= ndim {
        return Err(Error::Shape(format!(
            "concat axis {axis} out of range for shape {:?}",
            first.shape()
        )));
    }
    let mut axis_total = 0;
    for p in parts {
        if p.ndim() != ndim {
            return Err(Error::Shape(format!(
                "concat rank mismatch: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        for d in 0..ndim {
            if d != axis && p.shape()[d] != first.shape()[d] {
                return Err(Error::Shape(format!(
                    "concat dim {d} mismatch: {:?} vs {:?}",
                    first.shape(),
                    p.shape()
                )));
            }
        }
        axis_total += p.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;
    let (outer, _, inner) = axis_layout(&out_shape, axis);
    let mut data = vec![T::zero(); outer * axis_total * inner];
    let mut offset = 0;
    for p in parts {
        let len_p = p.shape()[axis];
        let src = p.data();
        for o in 0..outer {
            let dst_start = (o * axis_total + offset) * inner;
            let src_start = o * len_p * inner;
            data[dst_start..dst_start + len_p * inner]
                .copy_from_slice(&src[src_start..src_start + len_p * inner]);
        }
        offset += len_p;
    }
    let rg = grad_enabled() && parts.iter().any(|p| p.requires_grad());
    Ok(Tensor::new_node(
        out_shape,
        data,
        rg,
        rg.then(|| Op::Concat {
            parts: parts.iter().map(|p| (*p).clone()).collect(),
            axis,
        }),
    ))
}

pub(crate) fn transpose_copy<T: Scalar>(x: &[T], shape: &[usize], a: usize, b: usize) -> Vec<T> {
    let ndim = shape.len();
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let mut out = vec![T::zero(); x.len()];
    let mut idx = vec![0usize; ndim];
    for &v in x {
        let mut of = 0;
        for d in 0..ndim {
            let ix = if d == a {
                idx[b]
            } else if d == b {
                idx[a]
            } else {
                idx[d]
            };
            of = of * out_shape[d] + ix;
        }
        out[of] = v;
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

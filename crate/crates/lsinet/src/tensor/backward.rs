//! Graph edges and their backward rules. Each rule adds its contribution into
//! the parents' gradient buffers; nothing here allocates graph nodes.

use std::rc::Rc;

use super::ops::axis_layout;
use super::{Node, Scalar, Tensor};

pub enum Op<T: Scalar> {
    Matmul { a: Tensor<T>, b: Tensor<T> },
    Add { a: Tensor<T>, b: Tensor<T> },
    Sub { a: Tensor<T>, b: Tensor<T> },
    Mul { a: Tensor<T>, b: Tensor<T> },
    Relu { x: Tensor<T> },
    Exp { x: Tensor<T> },
    Log { x: Tensor<T> },
    Neg { x: Tensor<T> },
    Scale { x: Tensor<T>, c: T },
    AddScalar { x: Tensor<T> },
    Clamp { x: Tensor<T>, lo: T, hi: T },
    SteRound { x: Tensor<T> },
    Softmax { x: Tensor<T>, axis: usize },
    SumAll { x: Tensor<T> },
    SumAxis { x: Tensor<T>, axis: usize },
    Concat { parts: Vec<Tensor<T>>, axis: usize },
    Reshape { x: Tensor<T> },
    Transpose { x: Tensor<T>, a: usize, b: usize },
    IndexSelect { x: Tensor<T>, indices: Rc<Vec<usize>> },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Tensor<T>> {
        match self {
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![a.clone(), b.clone()]
            }
            Op::Relu { x }
            | Op::Exp { x }
            | Op::Log { x }
            | Op::Neg { x }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Clamp { x, .. }
            | Op::SteRound { x }
            | Op::Softmax { x, .. }
            | Op::SumAll { x }
            | Op::SumAxis { x, .. }
            | Op::Reshape { x }
            | Op::Transpose { x, .. }
            | Op::IndexSelect { x, .. } => vec![x.clone()],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    pub(crate) fn backward(&self, out: &Node<T>) {
        let g_ref = out.grad.borrow();
        let g = g_ref
            .as_deref()
            .expect("reverse topological order guarantees the output gradient exists");
        match self {
            Op::Matmul { a, b } => matmul_backward(a, b, out, g),
            Op::Add { a, b } => {
                if a.requires_grad() {
                    add_reduced(&a.0, g, |gv, _| gv);
                }
                if b.requires_grad() {
                    add_reduced(&b.0, g, |gv, _| gv);
                }
            }
            Op::Sub { a, b } => {
                if a.requires_grad() {
                    add_reduced(&a.0, g, |gv, _| gv);
                }
                if b.requires_grad() {
                    add_reduced(&b.0, g, |gv, _| -gv);
                }
            }
            Op::Mul { a, b } => {
                if a.requires_grad() {
                    let bd = b.data();
                    if a.numel() == g.len() {
                        // a is full-size; tile b across it
                        let mut buf = a.0.grad_buf();
                        for (i, gv) in g.iter().enumerate() {
                            buf[i] += *gv * bd[i % bd.len()];
                        }
                    } else {
                        let ad_len = a.numel();
                        let mut buf = a.0.grad_buf();
                        for (i, gv) in g.iter().enumerate() {
                            buf[i % ad_len] += *gv * bd[i];
                        }
                    }
                }
                if b.requires_grad() {
                    let ad = a.data();
                    if b.numel() == g.len() {
                        let mut buf = b.0.grad_buf();
                        for (i, gv) in g.iter().enumerate() {
                            buf[i] += *gv * ad[i % ad.len()];
                        }
                    } else {
                        let bd_len = b.numel();
                        let mut buf = b.0.grad_buf();
                        for (i, gv) in g.iter().enumerate() {
                            buf[i % bd_len] += *gv * ad[i];
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if x.requires_grad() {
                    let xd = x.data();
                    let mut buf = x.0.grad_buf();
                    for (i, gv) in g.iter().enumerate() {
                        if xd[i] > T::zero() {
                            buf[i] += *gv;
                        }
                    }
                }
            }
            Op::Exp { x } => {
                if x.requires_grad() {
                    let yd = out.data.borrow();
                    let mut buf = x.0.grad_buf();
                    for (i, gv) in g.iter().enumerate() {
                        buf[i] += *gv * yd[i];
                    }
                }
            }
            Op::Log { x } => {
                if x.requires_grad() {
                    let xd = x.data();
                    let mut buf = x.0.grad_buf();
                    for (i, gv) in g.iter().enumerate() {
                        buf[i] += *gv / xd[i];
                    }
                }
            }
            Op::Neg { x } => {
                if x.requires_grad() {
                    let mut buf = x.0.grad_buf();
                    for (i, gv) in g.iter().enumerate() {
                        buf[i] -= *gv;
                    }
                }
            }
            Op::Scale { x, c } => {
                if x.requires_grad() {
                    let mut buf = x.0.grad_buf();
                    for (i, gv) in g.iter().enumerate() {
                        buf[i] += *gv * *c;
                    }
                }
            }
            Op::AddScalar { x } | Op::SteRound { x } | Op::Reshape { x } => {
                if x.requires_grad() {
                    x.0.accumulate(g);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if x.requires_grad() {
                    let xd = x.data();
                    let mut buf = x.0.grad_buf();
                    for (i, gv) in g.iter().enumerate() {
                        if xd[i] >= *lo && xd[i] <= *hi {
                            buf[i] += *gv;
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if x.requires_grad() {
                    // dx = (g - <g, y>_axis) * y, with y the softmax output
                    let yd = out.data.borrow();
                    let (outer, len, inner) = axis_layout(&out.shape, *axis);
                    let mut buf = x.0.grad_buf();
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let mut dot = T::zero();
                            for j in 0..len {
                                dot += g[at(j)] * yd[at(j)];
                            }
                            for j in 0..len {
                                buf[at(j)] += (g[at(j)] - dot) * yd[at(j)];
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if x.requires_grad() {
                    let gv = g[0];
                    let mut buf = x.0.grad_buf();
                    for v in buf.iter_mut() {
                        *v += gv;
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                if x.requires_grad() {
                    let (outer, len, inner) = axis_layout(x.shape(), *axis);
                    let mut buf = x.0.grad_buf();
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                buf[o * len * inner + j * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_layout(&out.shape, *axis);
                let _ = total;
                let axis_total: usize = parts.iter().map(|p| p.shape()[*axis]).sum();
                let mut offset = 0;
                for p in parts {
                    let len_p = p.shape()[*axis];
                    if p.requires_grad() {
                        let mut buf = p.0.grad_buf();
                        for o in 0..outer {
                            let src_start = (o * axis_total + offset) * inner;
                            let dst_start = o * len_p * inner;
                            for i in 0..len_p * inner {
                                buf[dst_start + i] += g[src_start + i];
                            }
                        }
                    }
                    offset += len_p;
                }
            }
            Op::Transpose { x, a, b } => {
                if x.requires_grad() {
                    // transposing the gradient with the same axes maps it back
                    let gt = super::ops::transpose_copy(g, &out.shape, *a, *b);
                    x.0.accumulate(&gt);
                }
            }
            Op::IndexSelect { x, indices } => {
                if x.requires_grad() {
                    let row_len: usize = x.shape()[1..].iter().product();
                    let mut buf = x.0.grad_buf();
                    for (r, &src) in indices.iter().enumerate() {
                        for i in 0..row_len {
                            buf[src * row_len + i] += g[r * row_len + i];
                        }
                    }
                }
            }
        }
    }
}

/// Adds f(g) into the parent, summing over leading broadcast dims when the
/// parent is smaller than the output.
fn add_reduced<T: Scalar>(node: &Node<T>, g: &[T], f: impl Fn(T, usize) -> T) {
    let n: usize = node.shape.iter().product();
    let mut buf = node.grad_buf();
    if n == g.len() {
        for (i, gv) in g.iter().enumerate() {
            buf[i] += f(*gv, i);
        }
    } else {
        for (i, gv) in g.iter().enumerate() {
            buf[i % n] += f(*gv, i);
        }
    }
}

fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &Node<T>, g: &[T]) {
    let a_shape = a.shape();
    let b_shape = b.shape();
    let m = a_shape[a_shape.len() - 2];
    let k = a_shape[a_shape.len() - 1];
    let n = b_shape[b_shape.len() - 1];
    let ba: usize = a_shape[..a_shape.len() - 2].iter().product();
    let bb: usize = b_shape[..b_shape.len() - 2].iter().product();
    let a_batched = a_shape.len() > 2;
    let b_batched = b_shape.len() > 2;
    let _ = &out.shape;

    if !b_batched {
        // out = fold(A) x B with fold(A): [ba*m, k]
        let rows = if a_batched { ba * m } else { m };
        if a.requires_grad() {
            let bd = b.data();
            let mut da = a.0.grad_buf();
            T::gemm(false, true, rows, k, n, T::one(), g, &bd, T::one(), &mut da);
        }
        if b.requires_grad() {
            let ad = a.data();
            let mut db = b.0.grad_buf();
            T::gemm(true, false, k, n, rows, T::one(), &ad, g, T::one(), &mut db);
        }
    } else if !a_batched {
        // out_i = A x B_i
        if a.requires_grad() {
            let bd = b.data();
            let mut da = a.0.grad_buf();
            for i in 0..bb {
                T::gemm(
                    false,
                    true,
                    m,
                    k,
                    n,
                    T::one(),
                    &g[i * m * n..(i + 1) * m * n],
                    &bd[i * k * n..(i + 1) * k * n],
                    T::one(),
                    &mut da,
                );
            }
        }
        if b.requires_grad() {
            let ad = a.data();
            let mut db = b.0.grad_buf();
            for i in 0..bb {
                T::gemm(
                    true,
                    false,
                    k,
                    n,
                    m,
                    T::one(),
                    &ad,
                    &g[i * m * n..(i + 1) * m * n],
                    T::one(),
                    &mut db[i * k * n..(i + 1) * k * n],
                );
            }
        }
    } else {
        // equal batch dims on both sides
        if a.requires_grad() {
            let bd = b.data();
            let mut da = a.0.grad_buf();
            for i in 0..ba {
                T::gemm(
                    false,
                    true,
                    m,
                    k,
                    n,
                    T::one(),
                    &g[i * m * n..(i + 1) * m * n],
                    &bd[i * k * n..(i + 1) * k * n],
                    T::one(),
                    &mut da[i * m * k..(i + 1) * m * k],
                );
            }
        }
        if b.requires_grad() {
            let ad = a.data();
            let mut db = b.0.grad_buf();
            for i in 0..ba {
                T::gemm(
                    true,
                    false,
                    k,
                    n,
                    m,
                    T::one(),
                    &ad[i * m * k..(i + 1) * m * k],
                    &g[i * m * n..(i + 1) * m * n],
                    T::one(),
                    &mut db[i * k * n..(i + 1) * k * n],
                );
            }
        }
    }
}

//! Reverse-mode autodiff over dense row-major tensors.
//!
//! The graph is define-by-run: every op records its parents on the result
//! node, `backward` walks the recorded graph once in reverse topological
//! order. Tensors are immutable after creation except for gradient
//! accumulation and in-place parameter updates between steps.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

mod backward;
pub mod kernels;
mod ops;

pub use backward::Op;
pub use ops::concat;

/// Element type of a tensor. Training runs at f32, gradient checks run the
/// same code paths at f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + kernels::Gemm
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}
impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node<T: Scalar> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<T>>,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op<T>>,
}

impl<T: Scalar> Node<T> {
    /// Adds `delta` into the gradient buffer, allocating zeros first if needed.
    pub(crate) fn accumulate(&self, delta: &[T]) {
        let mut g = self.grad.borrow_mut();
        let buf = g.get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (gi, di) in buf.iter_mut().zip(delta) {
            *gi += *di;
        }
    }

    /// Mutable gradient buffer, initialized to zeros on first touch.
    pub(crate) fn grad_buf(&self) -> RefMut<'_, Vec<T>> {
        let n = self.shape.iter().product();
        RefMut::map(self.grad.borrow_mut(), |g| {
            g.get_or_insert_with(|| vec![T::zero(); n])
        })
    }
}

#[derive(Clone)]
pub struct Tensor<T: Scalar>(pub(crate) Rc<Node<T>>);

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.0.data.borrow();
        write!(f, "Tensor{:?} [", self.0.shape)?;
        for (i, v) in d.iter().take(8).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if d.len() > 8 {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// True unless inside a `no_grad` scope.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording any graph; ops inside return plain constants.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard(bool);
    impl Drop for Guard {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _guard = Guard(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<Op<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::new_node(shape.to_vec(), data, false, None))
    }

    /// Learnable leaf; `backward` populates its gradient.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::new_node(shape.to_vec(), data, true, None))
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&x| T::from_f64_lossy(x)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self::new_node(shape.to_vec(), vec![v; n], false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_node(vec![1], vec![v], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Borrow of the raw row-major buffer.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    /// Mutable borrow of the raw buffer, for in-place parameter updates.
    /// Must not be called while a graph referencing this tensor is alive.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Shape(format!(
                "item() needs exactly one element, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data.borrow()[0])
    }

    /// Element at a full index, for tests and small reads.
    pub fn at(&self, idx: &[usize]) -> T {
        assert_eq!(idx.len(), self.ndim());
        let mut flat = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(self.shape()).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} ({dim})");
            flat = flat * dim + ix;
        }
        self.0.data.borrow()[flat]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values as a fresh constant leaf, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::new_node(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// reachable `requires_grad` leaf; call `zero_grad` between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.0.requires_grad {
            return Err(Error::Contract(
                "backward on a tensor with no gradient graph".into(),
            ));
        }
        let order = self.topo_order();
        // Leaves accumulate across calls; interior nodes start each sweep fresh.
        for t in &order {
            if t.0.op.is_some() {
                *t.0.grad.borrow_mut() = None;
            }
        }
        self.0.accumulate(&[T::one()]);
        for t in order.iter().rev() {
            if let Some(op) = &t.0.op {
                op.backward(&t.0);
            }
        }
        Ok(())
    }

    /// Post-order over the ancestor graph: every node appears after all of
    /// its op inputs, so the reverse visits each node exactly once with its
    /// gradient complete.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, next parent index to expand)
        let mut stack: Vec<(Tensor<T>, usize)> = Vec::new();
        if visited.insert(self.id()) {
            stack.push((self.clone(), 0));
        }
        while let Some((t, i)) = stack.pop() {
            let parents = t.0.op.as_ref().map(|o| o.parents()).unwrap_or_default();
            if i < parents.len() {
                stack.push((t.clone(), i + 1));
                let p = parents[i].clone();
                if visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0], &[2, 2]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.mul(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn disconnected_parameter_grad_stays_zero() {
        let x = Tensor::<f64>::param(vec![1.0], &[1]).unwrap();
        let w = Tensor::<f64>::param(vec![5.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert!(w.grad().is_none());
        assert_eq!(w.grad_or_zeros(), vec![0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::param(vec![3.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = Tensor::<f64>::param(vec![2.0], &[1]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.backward().is_err());
    }

    #[test]
    fn shared_node_gets_both_contributions() {
        // loss = x*x + x  =>  d/dx = 2x + 1
        let x = Tensor::<f64>::param(vec![4.0], &[1]).unwrap();
        let loss = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![9.0]);
    }
}

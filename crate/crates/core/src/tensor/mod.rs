//! Dense row-major tensors with reverse-mode differentiation.
//!
//! The graph is define-by-run: every op output keeps handles to its parents
//! plus a closure that routes the output gradient back to them, and the whole
//! graph is rebuilt on each forward pass. `backward` on a scalar seeds the
//! root gradient and walks the graph in reverse topological order. Ops whose
//! inputs carry no gradient requirement produce plain constants, so eval-mode
//! forwards never allocate graph state.

mod conv;
mod elementwise;
mod gradcheck;
mod linalg;
mod norm;
mod pool;

pub use conv::{conv1d_channels, depthwise_conv2d, pointwise_conv2d, separable_conv2d};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use linalg::{
    add_joint_bias, apply_attention, batched_outer, fuse_maps, hconcat, linear, mul_channels,
    slice_channels,
};
pub use norm::{batchnorm2d, cross_entropy, softmax_lastdim, BN_EPSILON, BN_MOMENTUM};
pub use pool::{adaptive_avg_pool, adaptive_bins, avg_pool_axes};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// View handed to a backward closure: the node's own gradient and value,
/// plus the parent tensors to accumulate into.
pub(crate) struct BackArgs<'a, S: Scalar> {
    pub grad: &'a [S],
    pub data: &'a [S],
    pub parents: &'a [Tensor<S>],
}

type BackFn<S> = Box<dyn Fn(&BackArgs<'_, S>)>;

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    parents: Vec<Tensor<S>>,
    backward_fn: Option<BackFn<S>>,
    backward_done: Cell<bool>,
}

/// Shared handle to a dense tensor node. Cloning is cheap (reference count).
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.inner.shape, self.inner.requires_grad
        )
    }
}

fn check_shape<S: Scalar>(shape: &[usize], data: &[S]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("zero-size dimension in {shape:?}")));
    }
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(Error::Shape(format!(
            "shape {shape:?} implies {expected} elements, got {}",
            data.len()
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    fn build(
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
        parents: Vec<Tensor<S>>,
        backward_fn: Option<BackFn<S>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward_fn,
                backward_done: Cell::new(false),
            }),
        }
    }

    /// Constant leaf: participates in forward math, never receives a gradient.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        check_shape(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Learnable leaf: `backward` deposits a gradient here.
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        check_shape(shape, &data)?;
        Ok(Self::build(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, S::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, S::ONE)
    }

    pub fn full(shape: &[usize], value: S) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    /// Rank-1 single-element constant.
    pub fn scalar(value: S) -> Self {
        Self::build(vec![1], vec![value], false, Vec::new(), None)
    }

    /// Learnable leaf with entries drawn uniformly from `(-limit, limit)`.
    pub fn uniform_param<R: rand::Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Result<Self> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        Self::param(shape, data)
    }

    /// Internal op constructor. When no parent needs a gradient the result
    /// degrades to a constant and the backward closure is dropped.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward_fn: BackFn<S>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        if requires_grad {
            Self::build(shape, data, true, parents, Some(backward_fn))
        } else {
            Self::build(shape, data, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn elem_count(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the underlying values.
    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.borrow().clone()
    }

    /// Single-element extraction.
    pub fn item(&self) -> Result<S> {
        if self.elem_count() != 1 {
            return Err(Error::Shape(format!(
                "item() requires a single-element tensor, shape is {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Overwrite the values in place; shape is immutable.
    pub fn set_data(&self, values: &[S]) -> Result<()> {
        if values.len() != self.elem_count() {
            return Err(Error::Shape(format!(
                "set_data: expected {} values, got {}",
                self.elem_count(),
                values.len()
            )));
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Mutate the values in place (parameter updates, running statistics).
    pub fn update_data(&self, f: impl FnOnce(&mut [S])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[S]>) -> R) -> R {
        f(self.inner.grad.borrow().as_deref())
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulate `delta` into this tensor's gradient buffer.
    pub(crate) fn accumulate_grad(&self, delta: &[S]) {
        let mut guard = self.inner.grad.borrow_mut();
        match guard.as_mut() {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += *b;
                }
            }
            None => *guard = Some(delta.to_vec()),
        }
    }

    /// Mutable gradient buffer, allocated (zeroed) on first access.
    pub(crate) fn grad_buf(&self) -> RefMut<'_, Vec<S>> {
        {
            let mut guard = self.inner.grad.borrow_mut();
            if guard.is_none() {
                *guard = Some(vec![S::ZERO; self.elem_count()]);
            }
        }
        RefMut::map(self.inner.grad.borrow_mut(), |g| {
            g.as_mut().expect("grad allocated above")
        })
    }

    /// Reverse-mode differentiation from a scalar output. Every reachable
    /// gradient-requiring leaf receives `d(self)/d(leaf)` in its grad buffer.
    pub fn backward(&self) -> Result<()> {
        if self.elem_count() != 1 {
            return Err(Error::Autograd(format!(
                "backward requires a scalar output, shape is {:?}",
                self.shape()
            )));
        }
        if !self.inner.requires_grad {
            return Err(Error::Autograd(
                "backward on a tensor with no gradient path".to_string(),
            ));
        }
        if self.inner.backward_done.get() {
            return Err(Error::Autograd(
                "backward called twice on the same graph; re-run the forward pass".to_string(),
            ));
        }
        self.inner.backward_done.set(true);

        *self.inner.grad.borrow_mut() = Some(vec![S::ONE]);
        let order = topo_order(self);
        for node in order.iter().rev() {
            let Some(back) = node.inner.backward_fn.as_ref() else {
                continue;
            };
            let grad_guard = node.inner.grad.borrow();
            let Some(grad) = grad_guard.as_deref() else {
                continue;
            };
            let data_guard = node.inner.data.borrow();
            back(&BackArgs {
                grad,
                data: &data_guard,
                parents: &node.inner.parents,
            });
        }
        Ok(())
    }
}

/// Iterative DFS postorder over the parent graph (parents before children).
fn topo_order<S: Scalar>(root: &Tensor<S>) -> Vec<Tensor<S>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor<S>, usize)> = vec![(root.clone(), 0)];
    while let Some((node, child_idx)) = stack.pop() {
        if child_idx == 0 && !visited.insert(node.inner.id) {
            continue;
        }
        if child_idx < node.inner.parents.len() {
            let child = node.inner.parents[child_idx].clone();
            stack.push((node, child_idx + 1));
            if !visited.contains(&child.inner.id) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_data_must_agree() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn backward_on_sum_gives_ones() {
        let x = Tensor::<f64>::param(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, -5.0, 6.0]).unwrap();
        let s = x.sum_all();
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.relu();
        assert!(matches!(y.backward(), Err(Error::Autograd(_))));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let s = x.sum_all();
        s.backward().unwrap();
        assert!(matches!(s.backward(), Err(Error::Autograd(_))));
    }

    #[test]
    fn constants_do_not_build_graph() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.relu();
        assert!(!y.requires_grad());
        assert!(y.inner.parents.is_empty());
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let x = Tensor::<f64>::param(&[2], vec![3.0, -4.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -7.0]);
    }
}

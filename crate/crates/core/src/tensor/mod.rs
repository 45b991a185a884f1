//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an op on a gradient-tracking input keeps a
//! [`Node`] pointing at its parents and a closure that maps the output
//! gradient to parent gradients. [`Tensor::backward`] walks the reachable
//! graph in descending creation order, which is a valid reverse topological
//! order because parents are always created before their children.

mod layout;
mod linalg;
mod nn;
mod ops;
mod real;
pub(crate) mod shape;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use nn::DropoutStream;
pub use real::Real;
pub(crate) use real::{gemm, MatRef};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any graph on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Inputs handed to a backward closure.
pub(crate) struct GradCtx<'a, T: Real> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a [T],
    /// The node's own forward output.
    pub out: &'a [T],
    pub parents: &'a [Tensor<T>],
}

pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&GradCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Real> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// Reference-counted n-dimensional array in row-major order.
///
/// Cloning is cheap and shares storage; tensors are immutable once built.
pub struct Tensor<T: Real = f32>(Arc<Inner<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        s.field("requires_grad", &self.0.requires_grad);
        if let Some(node) = &self.0.node {
            s.field("op", &node.op);
        }
        s.finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} holds {n} elements but {len} were supplied"
        )));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients on [`backward`](Self::backward).
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::lit(v as f64)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    /// Result of an op. Records a graph node only when some parent tracks
    /// gradients and recording is enabled on this thread.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&GradCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Self::build(shape, data, false, None);
        }
        let node = Node {
            op,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        };
        Self::build(shape, data, true, Some(node))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.0.data.iter().map(|v| v.as_f64() as f32).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Creation index; parents always have a smaller id than their children.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Fresh leaf with the same values that tracks gradients.
    pub fn detach_param(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from a scalar, accumulating into every
    /// gradient-tracking leaf. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut nodes: HashMap<u64, Tensor<T>> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(node) = &t.0.node {
                stack.extend(node.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            nodes.insert(t.id(), t);
        }
        let mut order: Vec<u64> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for id in order {
            let t = &nodes[&id];
            let Some(g) = grads.remove(&id) else { continue };
            let Some(node) = &t.0.node else {
                t.accumulate_grad(&g);
                continue;
            };
            let ctx = GradCtx {
                grad: &g,
                out: &t.0.data,
                parents: &node.parents,
            };
            let parent_grads = (node.backward)(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel(), "grad size from {}", node.op);
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }
}

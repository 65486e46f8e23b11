//! Dense tensors with a reverse-mode autodiff graph.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations whose
//! inputs require gradients record a backward closure; [`Tensor::backward`]
//! walks the recorded graph from a scalar loss and returns a [`Gradients`]
//! map keyed by leaf identity.

mod element;
mod ops;
mod rng;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use element::Element;
pub use ops::{BinaryOp, UnaryOp};
pub(crate) use element::gemm;
pub use rng::RngStream;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Per-parent gradient produced by a backward rule; `None` skips the parent.
type GradOut<T> = Vec<Option<Vec<T>>>;
type BackwardFn<T> = Box<dyn Fn(&[T]) -> GradOut<T> + Send + Sync>;

struct Node<T: Element> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

pub struct Tensor<T: Element = f64> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.numel();
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad);
        if n <= 16 {
            d.field("data", &self.inner.data.as_slice());
        }
        d.finish()
    }
}

impl<T: Element> Tensor<T> {
    fn build(shape: Vec<usize>, data: Arc<Vec<T>>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                node,
            }),
        }
    }

    /// A constant (non-trainable) tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// A trainable leaf.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::build(t.inner.shape.clone(), Arc::clone(&t.inner.data), true, None))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&x| T::of(x)).collect(), shape)
    }

    pub fn scalar(x: T) -> Self {
        Self::build(Vec::new(), Arc::new(vec![x]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), Arc::new(vec![value; n]), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|x| x.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Identity of this value within a gradient map.
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    /// Same values, cut from the graph and never trainable.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), false, None)
    }

    /// Same values as a fresh trainable leaf.
    pub fn to_parameter(&self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), true, None)
    }

    /// Whether both tensors share shape and bitwise-identical values.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits))
    }

    /// Record an op result; the graph node is kept only if some parent needs it.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> GradOut<T> + Send + Sync + 'static,
    ) -> Self {
        Self::from_op_shared(shape, Arc::new(data), parents, backward)
    }

    pub(crate) fn from_op_shared(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> GradOut<T> + Send + Sync + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node {
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data, requires_grad, node)
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.inner.data)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        let mut grads_out = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { map: grads_out });
        }

        // Iterative post-order DFS; the reversed order is a valid topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.id(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains_key(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.inner.node {
                Some(node) => {
                    let contributions = (node.backward)(&g);
                    debug_assert_eq!(contributions.len(), node.parents.len());
                    for (parent, contrib) in node.parents.iter().zip(contributions) {
                        let Some(contrib) = contrib else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(contrib.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a = *a + *c),
                            None => {
                                pending.insert(parent.id(), contrib);
                            }
                        }
                    }
                }
                None => {
                    let grad = Tensor::build(t.shape().to_vec(), Arc::new(g), false, None);
                    grads_out.insert(t.id(), grad);
                }
            }
        }
        Ok(Gradients { map: grads_out })
    }
}

/// Gradients of a loss with respect to trainable leaves.
pub struct Gradients<T: Element> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&leaf.id())
    }

    /// Gradient for `leaf`, zero when the loss does not reach it.
    pub fn wrt(&self, leaf: &Tensor<T>) -> Tensor<T> {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests;

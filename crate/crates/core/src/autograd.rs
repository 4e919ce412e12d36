//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every differentiable operation applied to [`Var`]s.
//! [`Tape::backward`] walks the records in reverse creation order, which is
//! a valid topological order because a node can only depend on nodes that
//! existed before it.
//!
//! With recording disabled ([`Tape::inference`]) a `Var` is just a shared
//! tensor, so activations are freed as soon as the forward pass drops them.

use std::cell::RefCell;
use std::sync::Arc;

use crate::tensor::{Float, Tensor};

/// Computes parent gradients from the output gradient. The flag slice says
/// which parents need a gradient; entries for the others may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    /// A recording tape for training and gradient checks.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that records nothing; `backward` on it yields no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A constant input: no gradient is tracked.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            value: Arc::new(value),
            id: None,
        }
    }

    /// A leaf whose gradient will be available after `backward`.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value))
    }

    pub(crate) fn leaf_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        let id = self.push(Vec::new(), None, true);
        Var {
            tape: self,
            value,
            id,
        }
    }

    fn push(
        &self,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Option<usize> {
        if !self.recording {
            return None;
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents,
            backward,
            requires_grad,
        });
        Some(nodes.len() - 1)
    }

    /// Records the result of an operation on `inputs`.
    ///
    /// `backward` is only kept when at least one input is tracked.
    pub(crate) fn op(
        &self,
        value: Tensor<T>,
        inputs: &[&Var<'_, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'_, T> {
        let tracked: Vec<Option<usize>> = inputs.iter().map(|v| v.id).collect();
        if !self.recording || tracked.iter().all(Option::is_none) {
            return self.constant(value);
        }
        // Untracked inputs get a placeholder parent index of usize::MAX.
        let parents = tracked.iter().map(|p| p.unwrap_or(usize::MAX)).collect();
        let id = self.push(parents, Some(Box::new(backward)), true);
        Var {
            tape: self,
            value: Arc::new(value),
            id,
        }
    }

    /// Back-propagates from a scalar `output` (seeded with gradient 1).
    ///
    /// Each node's backward closure is consumed, so this can run once per
    /// recorded graph.
    pub fn backward(&self, output: &Var<'_, T>) -> Gradients<T> {
        let seed = Tensor::ones(output.value.shape());
        self.backward_with(output, seed)
    }

    /// Back-propagates an explicit output gradient.
    pub fn backward_with(&self, output: &Var<'_, T>, seed: Tensor<T>) -> Gradients<T> {
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = output.id else {
            return Gradients { grads };
        };
        grads[root] = Some(seed);
        for i in (0..=root).rev() {
            let Some(backward) = nodes[i].backward.take() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let parents = &nodes[i].parents;
            let needs: Vec<bool> = parents
                .iter()
                .map(|&p| p != usize::MAX && nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((&p, pg), need) in parents.iter().zip(parent_grads).zip(&needs) {
                if !need {
                    continue;
                }
                let Some(pg) = pg else { continue };
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients of leaves after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to a leaf, or `None` if it did not influence
    /// the output.
    pub fn wrt(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.grads.get(id)?.as_ref())
    }

    pub(crate) fn by_node(&self, id: usize) -> Option<&Tensor<T>> {
        self.grads.get(id)?.as_ref()
    }
}

/// A value on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    value: Arc<Tensor<T>>,
    id: Option<usize>,
}

impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn shared(&self) -> Arc<Tensor<T>> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.id
    }

    /// Clones the value out of the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::{Element, Tensor};

/// Computes parent gradients from `(grad_of_output, parents, output_value)`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[Var<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Element> {
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
    grad: RefCell<Option<Tensor<T>>>,
}

/// A node in the computation graph.
///
/// Cloning is cheap (reference counted). Nodes that do not depend on any
/// gradient-requiring leaf drop their parents immediately, so inference
/// passes do not retain intermediate activations.
pub struct Var<T: Element>(Rc<Node<T>>);

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(self.0.clone())
    }
}

impl<T: Element> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Leaf that never receives a gradient.
pub fn no_grad_leaf<T: Element>(value: Tensor<T>) -> Var<T> {
    Var::constant(value)
}

impl<T: Element> Var<T> {
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    pub(crate) fn from_op(value: Tensor<T>, parents: Vec<Var<T>>, backward: BackwardFn<T>) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            value,
            requires_grad,
            parents,
            backward: Some(backward),
            grad: RefCell::new(None),
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Accumulated gradient of a leaf after [`Var::backward`].
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Back-propagates from this scalar node, accumulating into leaf grads.
    pub fn backward(&self) {
        assert_eq!(self.0.value.len(), 1, "backward() needs a scalar, got {:?}", self.shape());
        self.backward_with(Tensor::full(self.shape(), T::one()));
    }

    /// Back-propagates an explicit output gradient (vector-Jacobian product).
    pub fn backward_with(&self, seed: Tensor<T>) {
        assert_eq!(seed.shape(), self.shape(), "seed gradient shape mismatch");
        if !self.requires_grad() {
            return;
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Tensor<T>> = HashMap::new();
        pending.insert(self.key(), seed);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else { continue };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&grad),
                        None => *slot = Some(grad),
                    }
                }
                Some(f) => {
                    let parent_grads = f(&grad, &node.0.parents, &node.0.value);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (parent, g) in node.0.parents.iter().zip(parent_grads) {
                        let Some(g) = g else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), parent.shape());
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                pending.insert(parent.key(), g);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Nodes reachable through gradient-requiring edges, parents before children.
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.requires_grad() && !seen.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

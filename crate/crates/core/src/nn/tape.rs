//! A small reverse-mode tape over dense `f64` arrays.
//!
//! Operations append a node holding their output value and a closure mapping the
//! output gradient to one gradient per parent. [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid topological order.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::ArrayD;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Parameter,
    Intermediate,
}

/// A value with its gradient, as exported from a tape after a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub role: Role,
}

impl DiffTensor {
    pub fn is_finite(&self) -> bool {
        self.value.iter().chain(self.grad.iter()).all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<ArrayD<f64>>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    role: Role,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar output with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, like: &ArrayD<f64>) -> ArrayD<f64> {
        self.get(var).cloned().unwrap_or_else(|| ArrayD::zeros(like.raw_dim()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: ArrayD<f64>, role: Role) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.push_node(Rc::new(value), role, Vec::new(), None)
    }

    pub fn input(&self, value: ArrayD<f64>) -> Var {
        self.leaf(value, Role::Input)
    }

    pub fn parameter(&self, value: ArrayD<f64>) -> Var {
        self.leaf(value, Role::Parameter)
    }

    pub(crate) fn push(&self, value: ArrayD<f64>, parents: Vec<Var>, backward: BackwardFn) -> Var {
        self.push_node(Rc::new(value), Role::Intermediate, parents, Some(backward))
    }

    fn push_node(
        &self,
        value: Rc<ArrayD<f64>>,
        role: Role,
        parents: Vec<Var>,
        backward: Option<BackwardFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, role, parents, backward });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes.borrow()[var.0].value)
    }

    pub fn shape(&self, var: Var) -> Vec<usize> {
        self.nodes.borrow()[var.0].value.shape().to_vec()
    }

    pub fn role(&self, var: Var) -> Role {
        self.nodes.borrow()[var.0].role
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        let value = self.value(var);
        assert_eq!(value.len(), 1, "node {} is not a scalar", var.0);
        *value.iter().next().unwrap()
    }

    /// Reverse pass from a scalar `output`, seeded with gradient 1.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        assert_eq!(nodes[output.0].value.len(), 1, "backward needs a scalar output");
        grads[output.0] = Some(ArrayD::ones(nodes[output.0].value.raw_dim()));

        for idx in (0..=output.0).rev() {
            let node = &nodes[idx];
            let Some(backward) = &node.backward else { continue };
            let Some(upstream) = grads[idx].take() else { continue };
            let parent_grads = backward(&upstream);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(g.shape(), nodes[parent.0].value.shape());
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(upstream);
        }
        Gradients { grads }
    }

    /// Exports `var` as a value/gradient pair.
    pub fn diff_tensor(&self, var: Var, grads: &Gradients) -> DiffTensor {
        let value = (*self.value(var)).clone();
        let grad = grads.get_or_zeros(var, &value);
        DiffTensor { value, grad, role: self.role(var) }
    }
}

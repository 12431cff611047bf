//! Reverse-mode automatic differentiation over dynamically shaped `f64` arrays.
//!
//! A [`Tape`] records every operation of a forward pass as a node graph.
//! [`Tensor`] is a copyable handle into the tape. Calling [`Tape::backward`]
//! on a scalar output walks the graph in reverse and accumulates gradients
//! for every leaf that requires them.
//!
//! Model parameters live outside the tape in a [`ParamStore`]; each training
//! step builds a fresh tape, inserts the parameters as leaves and reads their
//! gradients back out by [`ParamId`] after the backward pass.

mod conv;
pub mod gradcheck;
pub mod init;
mod ops;
mod rodrigues;
mod sample;

pub use ops::{concat, Op};
pub use rodrigues::rotation_from_axis_angle;

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::collections::HashMap;

/// Identifier of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter arrays owned by a model, independent of any tape.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<(String, ArrayD<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].1
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ArrayD<f64>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }
}

pub(crate) struct Node {
    pub value: ArrayD<f64>,
    pub parents: Vec<usize>,
    pub op: Op,
    pub requires_grad: bool,
    pub param: Option<ParamId>,
}

/// Records the computation graph of one forward pass.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(
        &self,
        value: ArrayD<f64>,
        parents: Vec<usize>,
        op: Op,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            op,
            requires_grad,
            param,
        });
        nodes.len() - 1
    }

    pub(crate) fn push_op(&self, value: ArrayD<f64>, parents: Vec<usize>, op: Op) -> Tensor<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let idx = self.push(value, parents, op, requires_grad, None);
        Tensor { tape: self, idx }
    }

    /// Insert a value that gradients do not flow into (images, masks, grids).
    pub fn constant(&self, value: ArrayD<f64>) -> Tensor<'_> {
        let idx = self.push(value, Vec::new(), Op::Leaf, false, None);
        Tensor { tape: self, idx }
    }

    /// Insert a differentiable leaf (used by gradient checks and tests).
    pub fn leaf(&self, value: ArrayD<f64>) -> Tensor<'_> {
        let idx = self.push(value, Vec::new(), Op::Leaf, true, None);
        Tensor { tape: self, idx }
    }

    /// Insert a parameter as a differentiable leaf. Repeated calls with the
    /// same id (weight sharing) return the same node.
    pub fn param<'t>(&'t self, store: &ParamStore, id: ParamId) -> Tensor<'t> {
        if let Some(&idx) = self.param_nodes.borrow().get(&id) {
            return Tensor { tape: self, idx };
        }
        let idx = self.push(store.value(id).clone(), Vec::new(), Op::Leaf, true, Some(id));
        self.param_nodes.borrow_mut().insert(id, idx);
        Tensor { tape: self, idx }
    }

    pub fn scalar(&self, v: f64) -> Tensor<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Reverse pass from a scalar root. Returns gradients for leaves only;
    /// intermediate gradients are dropped as soon as they are consumed.
    pub fn backward(&self, root: Tensor<'_>) -> Grads {
        self.backward_impl(root, false)
    }

    /// Reverse pass retaining the gradient of every node (used by
    /// reachability tests).
    pub fn backward_keep_all(&self, root: Tensor<'_>) -> Grads {
        self.backward_impl(root, true)
    }

    fn backward_impl(&self, root: Tensor<'_>, keep_all: bool) -> Grads {
        assert!(std::ptr::eq(root.tape, self), "root from another tape");
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.idx];
        assert!(
            root_node.value.len() == 1,
            "backward root must be a scalar, got shape {:?}",
            root_node.value.shape()
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..=root.idx).map(|_| None).collect();
        grads[root.idx] = Some(ArrayD::from_elem(root_node.value.raw_dim(), 1.0));

        for i in (0..=root.idx).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            if !node.parents.is_empty() {
                ops::backward_step(&nodes, i, &grad, &mut grads);
            }
            if keep_all || node.parents.is_empty() {
                grads[i] = Some(grad);
            }
        }
        Grads { by_node: grads }
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) idx: usize,
}

impl<'t> Tensor<'t> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    pub fn ndim(&self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.ndim()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clone the node's value out of the tape.
    pub fn value(&self) -> ArrayD<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// Run `f` against the node's value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    /// Extract the value of a single-element tensor.
    pub fn scalar_value(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.idx].value;
        assert!(v.len() == 1, "scalar_value on shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Re-insert this value as a constant, cutting the gradient path.
    pub fn detach(&self) -> Tensor<'t> {
        self.tape.constant(self.value())
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Position of this tensor's node on the tape.
    pub fn node_index(&self) -> usize {
        self.idx
    }
}

/// Gradients produced by a backward pass, indexed by tape node.
pub struct Grads {
    by_node: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, t: Tensor<'_>) -> Option<&ArrayD<f64>> {
        self.by_node.get(t.idx).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter, summed over every tape node that shares the id.
    pub fn by_param(&self, tape: &Tape, id: ParamId) -> Option<ArrayD<f64>> {
        let nodes = tape.nodes.borrow();
        let mut acc: Option<ArrayD<f64>> = None;
        for (i, node) in nodes.iter().enumerate() {
            if node.param == Some(id) {
                if let Some(Some(g)) = self.by_node.get(i) {
                    match &mut acc {
                        Some(a) => *a += g,
                        None => acc = Some(g.clone()),
                    }
                }
            }
        }
        acc
    }
}

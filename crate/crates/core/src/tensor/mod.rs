//! Dense `f64` arrays with tape-free reverse-mode differentiation.
//!
//! Every [`Tensor`] produced by an operation keeps handles to its parents and a
//! closure computing the vector-Jacobian product for each of them. Calling
//! [`Tensor::backward`] on a scalar walks the recorded graph in reverse
//! topological order and accumulates gradients into the leaves that were
//! created with `requires_grad`.
//!
//! Graphs are built from `Rc` handles and are therefore confined to the thread
//! that built them.

mod gradcheck;
pub mod nn;
mod ops;
mod optim;
mod segment;

pub use gradcheck::{finite_diff_check, finite_diff_check_params};
pub use nn::{randn, BatchNorm, BnState, InitScheme, Linear, Mlp, Mode};
pub use ops::{BinaryOp, UnaryOp, STABILIZER};
pub use optim::{adam_step, Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use segment::{ReduceKind, Segments};

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Vector-Jacobian product for one recorded operation: given the gradient of
/// the output, produce one gradient per parent (`None` for parents that do not
/// require a gradient).
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub out: &'a [f64],
    pub parents: &'a [Tensor],
}

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &*self.0.data.borrow())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape { shape, len: data.len() });
        }
        Ok(Self::leaf(shape, data, false))
    }

    /// Trainable leaf.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape { shape, len: data.len() });
        }
        Ok(Self::leaf(shape, data, true))
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![1], vec![v], false)
    }

    pub fn scalar_param(v: f64) -> Self {
        Self::leaf(vec![1], vec![v], true)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![0.0; n], false)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Config("ragged rows".into()));
        }
        Tensor::new(vec![m, d], rows.concat())
    }

    pub fn column(values: &[f64]) -> Self {
        Self::leaf(vec![values.len(), 1], values.to_vec(), false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Result of an operation. Parents and the backward closure are only kept
    /// when some parent needs a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        if !requires_grad {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: true,
            parents,
            backward: Some(backward),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn rows(&self) -> usize {
        self.0.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.0.shape.len() >= 2 {
            self.0.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.0.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the values of a leaf in place (optimizer updates, finite
    /// differences, checkpoint loading).
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut data = self.0.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::LengthMismatch(data.len(), values.len()));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    pub fn same_node(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    fn add_to_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls;
    /// intermediate gradients live only for the duration of the call.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::with_capacity(order.len());
        grads.insert(self.key(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            match &node.0.backward {
                None => node.add_to_grad(&g),
                Some(backward) => {
                    let out = node.0.data.borrow();
                    let parent_grads = backward(&BackwardCtx {
                        grad: &g,
                        out: &out,
                        parents: &node.0.parents,
                    });
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        grads
                            .entry(parent.key())
                            .and_modify(|acc| acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b))
                            .or_insert(pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes requiring grad, parents before children.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        // (node, children pushed?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.0.parents {
                if p.requires_grad() && !visited.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

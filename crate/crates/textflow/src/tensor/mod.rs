//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The graph is a tape rebuilt on every forward pass: each operation returns
//! a fresh node holding its inputs (as shared references) and a closure that
//! propagates the output gradient to those inputs. [`Tensor::backward`] runs
//! a deterministic topological traversal, so two backward passes over the
//! same graph produce bit-identical gradients.
//!
//! Scope is deliberately small: row-major storage, shape checks at every op
//! boundary, and no broadcasting beyond scalar-with-tensor plus two explicit
//! row/column broadcast ops whose gradient rules are spelled out in one place.

mod ops;

pub mod gradcheck;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid dimensions {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Contract(String),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn = Box<dyn Fn(&[f64])>;

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Shared handle to a tape node. Cloning is cheap and aliases the same data.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_node(node: Node) -> Self {
        Tensor {
            inner: Rc::new(node),
        }
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
        })
    }

    /// Constant tensor that does not participate in gradients.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf: gradients accumulate here during backward.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Self {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor::new(shape, vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value])
    }

    pub(crate) fn derived(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        assert_eq!(numel(&shape), data.len());
        Tensor::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            parents,
            backward: if requires_grad { Some(backward) } else { None },
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow of the underlying values (row-major).
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    /// Overwrites the stored values. Intended for optimizer updates and
    /// parameter restoration on leaves; using it on interior nodes would
    /// desynchronize the tape.
    pub fn set_data(&self, values: &[f64]) {
        let mut data = self.inner.data.borrow_mut();
        assert_eq!(data.len(), values.len());
        data.copy_from_slice(values);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Gradient buffer, zeros if this leaf never received one.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` ancestor reachable from `self`.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        let order = self.topo_order();
        self.accumulate_grad(&[1.0]);
        for tensor in order.iter().rev() {
            let node = &tensor.inner;
            if let Some(backward) = &node.backward {
                let grad = node
                    .grad
                    .borrow()
                    .clone()
                    .unwrap_or_else(|| vec![0.0; numel(&node.shape)]);
                backward(&grad);
            }
        }
        Ok(())
    }

    /// Iterative postorder DFS; children appear after all their parents are
    /// visited, so reverse order is a valid gradient schedule.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, parents_scheduled)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((tensor, expanded)) = stack.pop() {
            if expanded {
                order.push(tensor);
                continue;
            }
            if !visited.insert(tensor.inner.id) {
                continue;
            }
            if !tensor.inner.requires_grad {
                continue;
            }
            stack.push((tensor.clone(), true));
            for parent in &tensor.inner.parents {
                if parent.inner.requires_grad && !visited.contains(&parent.inner.id) {
                    stack.push((parent.clone(), false));
                }
            }
        }
        order
    }
}

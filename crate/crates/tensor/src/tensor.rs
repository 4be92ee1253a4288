//! The tensor handle and the reverse-mode engine.
//!
//! A [`Tensor`] is a reference-counted node holding a dense row-major `f64`
//! buffer. Operations record a [`GradFn`] on their output when gradients are
//! enabled and at least one input requires them; [`Tensor::backward`] walks
//! the recorded graph in reverse topological order.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::shape::numel;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Whether operations currently record a backward graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Runs `f` with graph recording disabled; intermediates are freed as soon as
/// they go out of scope.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|c| c.replace(false)));
    f()
}

/// Backward rule of one recorded operation.
pub trait GradFn {
    fn name(&self) -> &'static str;

    /// The operation inputs, in the order `backward` returns their gradients.
    fn inputs(&self) -> Vec<&Tensor>;

    /// Given the forward output and the gradient w.r.t. it, returns one entry
    /// per input. `None` means "no contribution".
    fn backward(&self, out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn>>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name()))
            .finish()
    }
}

impl Tensor {
    fn from_node(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Self {
        assert_eq!(
            data.len(),
            numel(&shape),
            "buffer of {} values does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// A constant tensor; never receives gradients.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::from_node(data, shape.to_vec(), false, None)
    }

    /// A leaf that accumulates gradients (a trainable parameter or an input
    /// under test).
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Self {
        Self::from_node(data, shape.to_vec(), true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![0.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::new(vec![value; numel(shape)], shape)
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![value], &[])
    }

    /// Output of an operation. The backward rule is attached only when
    /// recording is enabled and some input requires gradients.
    pub fn from_op(data: Vec<f64>, shape: Vec<usize>, grad_fn: impl GradFn + 'static) -> Self {
        let track = is_grad_enabled() && grad_fn.inputs().iter().any(|t| t.requires_grad());
        if track {
            Self::from_node(data, shape, true, Some(Box::new(grad_fn)))
        } else {
            Self::from_node(data, shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the buffer. Only meaningful for leaves; mutating an
    /// interior node invalidates its recorded backward rule.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// A constant copy cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.to_vec(), self.shape())
    }

    /// Backpropagates from a one-element tensor.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() needs a scalar, got {:?}", self.shape());
        self.backward_with(vec![1.0]);
    }

    /// Backpropagates an explicit output gradient.
    pub fn backward_with(&self, seed: Vec<f64>) {
        assert_eq!(seed.len(), self.numel());
        if !self.requires_grad() {
            return;
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => add_into(acc, &grad),
                        None => *slot = Some(grad),
                    }
                }
                Some(f) => {
                    let input_grads = {
                        let out = node.0.data.borrow();
                        f.backward(&out, &grad)
                    };
                    drop(grad);
                    for (input, g) in f.inputs().into_iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), input.numel(), "{} gradient size", f.name());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => add_into(acc, &g),
                            None => {
                                pending.insert(input.id(), g);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Post-order over the nodes reachable through recorded operations.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = &t.0.grad_fn {
                for input in f.inputs() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

pub(crate) fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// True when an op over `inputs` would record a backward rule.
pub fn needs_grad(inputs: &[&Tensor]) -> bool {
    is_grad_enabled() && inputs.iter().any(|t| t.requires_grad())
}

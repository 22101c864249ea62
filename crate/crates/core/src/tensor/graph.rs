use std::cell::{Cell, RefCell};
use std::sync::Arc;

use super::param::{ParamId, ParamStore};
use super::{Real, Tensor};
use crate::error::{Result, VolrigError};

/// Gradient of one input, or `None` when the input does not need one.
pub(crate) type InputGrads<T> = Vec<Option<Tensor<T>>>;
type Backward<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> InputGrads<T>>;

struct Node<T> {
    inputs: Vec<usize>,
    backward: Option<Backward<T>>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// A value produced inside a [`Graph`].
#[derive(Clone)]
pub struct Var<T> {
    pub(crate) id: usize,
    pub(crate) value: Arc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

const UNTRACKED: usize = usize::MAX;

/// Tape of operations. A graph built with [`Graph::no_grad`] records nothing
/// and keeps no intermediate values alive.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    record: bool,
    consumed: Cell<bool>,
}

impl<T: Real> Graph<T> {
    pub fn with_grad() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: true,
            consumed: Cell::new(false),
        }
    }

    pub fn no_grad() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            record: false,
            consumed: Cell::new(false),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push(&self, node: Node<T>) -> usize {
        if !self.record {
            return UNTRACKED;
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    fn needs_grad(&self, id: usize) -> bool {
        id != UNTRACKED && self.nodes.borrow()[id].needs_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<T> {
        let id = self.push(Node {
            inputs: vec![],
            backward: None,
            needs_grad: false,
            param: None,
        });
        Var { id, value: Arc::new(t) }
    }

    /// A leaf bound to a trainable entry of `store`.
    pub fn param(&self, store: &ParamStore<T>, pid: ParamId) -> Var<T> {
        let id = self.push(Node {
            inputs: vec![],
            backward: None,
            needs_grad: store.is_trainable(pid),
            param: Some(pid),
        });
        Var {
            id,
            value: store.value_arc(pid),
        }
    }

    /// Records an operation. `backward` maps the output gradient to one
    /// optional gradient per input and is only kept when recording.
    pub(crate) fn op(
        &self,
        name: &str,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl FnOnce(&Tensor<T>, &[bool]) -> InputGrads<T> + 'static,
    ) -> Result<Var<T>> {
        if !value.is_finite() {
            return Err(VolrigError::NonFinite(name.to_string()));
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let needs = self.record && ids.iter().any(|&i| self.needs_grad(i));
        let id = self.push(Node {
            inputs: ids,
            backward: needs.then(|| Box::new(backward) as Backward<T>),
            needs_grad: needs,
            param: None,
        });
        Ok(Var {
            id,
            value: Arc::new(value),
        })
    }

    /// Reverse-mode accumulation from a scalar into the gradients of every
    /// trainable entry of `store`. Unreached entries receive zeros. The tape
    /// is released afterwards, so a second call fails.
    pub fn backward(&self, loss: &Var<T>, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed.get() {
            return Err(VolrigError::GraphConsumed);
        }
        if !self.record || loss.id == UNTRACKED {
            return Err(VolrigError::Invalid("graph was built without gradient recording".into()));
        }
        if loss.value.len() != 1 {
            return Err(VolrigError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        self.consumed.set(true);
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let flags: Vec<bool> = nodes.iter().map(|n| n.needs_grad).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss.shape(), T::one()));
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &mut nodes[i];
            if let Some(pid) = node.param {
                store.accumulate_grad(pid, &g)?;
            }
            if let Some(bw) = node.backward.take() {
                let need: Vec<bool> = node.inputs.iter().map(|&j| flags[j]).collect();
                let out = bw(&g, &need);
                debug_assert_eq!(out.len(), node.inputs.len());
                for (&j, gj) in node.inputs.iter().zip(out) {
                    let Some(gj) = gj else { continue };
                    if !flags[j] {
                        continue;
                    }
                    match &mut grads[j] {
                        Some(acc) => acc.add_assign(&gj),
                        slot => *slot = Some(gj),
                    }
                }
            }
        }
        store.mark_gradients_ready();
        Ok(())
    }
}

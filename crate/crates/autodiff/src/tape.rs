//! Tape recording and the reverse sweep.
//!
//! Every backward rule is written in terms of ordinary [`Tensor`]
//! operations. With `create_graph` the sweep keeps recording, so the
//! gradients it returns are themselves nodes on the tape and can be
//! differentiated again (reverse-over-reverse).

use std::cell::RefCell;
use std::rc::{Rc, Weak};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::array::Array;
use crate::error::{AutodiffError, Result};
use crate::ops::Op;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) value: Arc<Array>,
}

pub(crate) struct TapeInner {
    id: u64,
    nodes: Vec<Node>,
    recording: bool,
}

/// Records primitive operations for one differentiation session.
///
/// Tapes are single-threaded and cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
                nodes: Vec::new(),
                recording: true,
            })),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Array) -> Tensor {
        self.push(Op::Leaf, Vec::new(), Arc::new(value))
    }

    fn push(&self, op: Op, inputs: Vec<Tensor>, value: Arc<Array>) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        let index = inner.nodes.len();
        let handle = NodeHandle {
            tape: Rc::downgrade(&self.inner),
            tape_id: inner.id,
            index,
        };
        inner.nodes.push(Node {
            op,
            inputs,
            value: value.clone(),
        });
        Tensor {
            value,
            node: Some(handle),
        }
    }

    fn set_recording(&self, on: bool) -> bool {
        std::mem::replace(&mut self.inner.borrow_mut().recording, on)
    }
}

#[derive(Clone)]
pub(crate) struct NodeHandle {
    tape: Weak<RefCell<TapeInner>>,
    tape_id: u64,
    index: usize,
}

/// An immutable value, optionally recorded on a [`Tape`].
///
/// Tensors without a node are constants: operations on them are evaluated
/// eagerly and never recorded.
#[derive(Clone)]
pub struct Tensor {
    value: Arc<Array>,
    node: Option<NodeHandle>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.value.shape())
            .field("graph_id", &self.graph_id())
            .finish()
    }
}

impl From<Array> for Tensor {
    fn from(value: Array) -> Self {
        Tensor::constant(value)
    }
}

impl Tensor {
    pub fn constant(value: Array) -> Self {
        Self {
            value: Arc::new(value),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::scalar(value))
    }

    pub fn value(&self) -> &Array {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// `(tape id, node index)` when recorded.
    pub fn graph_id(&self) -> Option<(u64, usize)> {
        self.node.as_ref().map(|n| (n.tape_id, n.index))
    }

    /// Finiteness probe for the whole value.
    pub fn is_finite(&self) -> bool {
        self.value.all_finite()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor {
            value: self.value.clone(),
            node: None,
        }
    }

    fn tape(&self) -> Option<Tape> {
        self.node
            .as_ref()
            .and_then(|n| n.tape.upgrade())
            .map(|inner| Tape { inner })
    }

    /// Wraps a freshly computed value, recording it when any input is live
    /// on a recording tape.
    pub(crate) fn record(op: Op, inputs: Vec<Tensor>, value: Array) -> Result<Tensor> {
        let mut tape: Option<Tape> = None;
        for t in &inputs {
            if let Some(tp) = t.tape() {
                match &tape {
                    None => tape = Some(tp),
                    Some(existing) if existing.id() != tp.id() => {
                        return Err(AutodiffError::TapeMismatch)
                    }
                    _ => {}
                }
            }
        }
        match tape {
            Some(tp) if tp.inner.borrow().recording => Ok(tp.push(op, inputs, Arc::new(value))),
            _ => Ok(Tensor::constant(value)),
        }
    }
}

/// Gradients of a scalar `loss` with respect to each tensor in `wrt`.
///
/// With `create_graph` the returned gradients stay on the tape, so a
/// penalty built from them can be differentiated again.
pub fn backward(loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.len() != 1 {
        return Err(AutodiffError::NotScalar(loss.shape().to_vec()));
    }
    let zeros = |t: &Tensor| Tensor::constant(Array::zeros(t.shape()));

    let Some(loss_node) = &loss.node else {
        for t in wrt {
            if t.node.is_none() {
                return Err(AutodiffError::NotOnTape(0));
            }
        }
        return Ok(wrt.iter().map(|t| zeros(t)).collect());
    };
    let tape = loss.tape().ok_or(AutodiffError::NotOnTape(loss_node.index))?;
    let tape_id = loss_node.tape_id;
    let loss_idx = loss_node.index;

    let mut wrt_idx = Vec::with_capacity(wrt.len());
    for (i, t) in wrt.iter().enumerate() {
        match &t.node {
            Some(n) if n.tape_id == tape_id => wrt_idx.push(n.index),
            _ => return Err(AutodiffError::NotOnTape(i)),
        }
    }
    let Some(&start) = wrt_idx.iter().min() else {
        return Ok(Vec::new());
    };
    if start > loss_idx {
        return Ok(wrt.iter().map(|t| zeros(t)).collect());
    }

    // Only nodes downstream of some `wrt` entry need adjoints.
    let span = loss_idx + 1 - start;
    let mut live = vec![false; span];
    {
        let inner = tape.inner.borrow();
        for &w in wrt_idx.iter().filter(|&&w| w <= loss_idx) {
            live[w - start] = true;
        }
        for i in start..=loss_idx {
            if live[i - start] {
                continue;
            }
            live[i - start] = inner.nodes[i].inputs.iter().any(|t| {
                t.node
                    .as_ref()
                    .is_some_and(|n| n.index >= start && live[n.index - start])
            });
        }
    }
    let mut is_wrt = vec![false; span];
    for &w in wrt_idx.iter().filter(|&&w| w <= loss_idx) {
        is_wrt[w - start] = true;
    }

    let previous = tape.set_recording(create_graph);
    let result = sweep(&tape, loss, start, loss_idx, &live, &is_wrt);
    tape.set_recording(previous);
    let found = result?;

    Ok(wrt_idx
        .iter()
        .zip(wrt)
        .map(|(&i, t)| found.get(i - start).cloned().flatten().unwrap_or_else(|| zeros(t)))
        .collect())
}

fn sweep(
    tape: &Tape,
    loss: &Tensor,
    start: usize,
    loss_idx: usize,
    live: &[bool],
    is_wrt: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let span = loss_idx + 1 - start;
    let mut grads: Vec<Option<Tensor>> = vec![None; span];
    let mut kept: Vec<Option<Tensor>> = vec![None; span];
    grads[span - 1] = Some(Tensor::constant(Array::ones(loss.shape())));

    for i in (start..=loss_idx).rev() {
        let slot = i - start;
        let Some(g) = grads[slot].take() else { continue };
        if is_wrt[slot] {
            kept[slot] = Some(g.clone());
        }
        let (op, inputs, output) = {
            let inner = tape.inner.borrow();
            let node = &inner.nodes[i];
            if node.inputs.is_empty() {
                continue;
            }
            let output = Tensor {
                value: node.value.clone(),
                node: Some(NodeHandle {
                    tape: Rc::downgrade(&tape.inner),
                    tape_id: inner.id,
                    index: i,
                }),
            };
            (node.op.clone(), node.inputs.clone(), output)
        };
        let needs: Vec<bool> = inputs
            .iter()
            .map(|t| {
                t.node
                    .as_ref()
                    .is_some_and(|n| n.index >= start && live[n.index - start])
            })
            .collect();
        if !needs.iter().any(|&b| b) {
            continue;
        }
        let input_grads = op.vjp(&inputs, &output, &g, &needs)?;
        for ((t, need), ig) in inputs.iter().zip(&needs).zip(input_grads) {
            if !*need {
                continue;
            }
            let Some(ig) = ig else { continue };
            let j = t.node.as_ref().map(|n| n.index).unwrap_or(0) - start;
            grads[j] = Some(match grads[j].take() {
                Some(acc) => acc.add(&ig)?,
                None => ig,
            });
        }
    }
    Ok(kept)
}

//! The recording tape.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Values available to an op's backward rule.
pub(crate) struct BackwardCtx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether each input needs a gradient; rules may skip the rest.
    pub needs: Vec<bool>,
}

pub(crate) trait Backward<T: Real> {
    /// One entry per input; `None` where `needs` is false.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    tracked: bool,
    grad: Option<Tensor<T>>,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in recording order, so every node's inputs precede it.
/// [`Graph::backward`] walks the nodes in exactly the reverse order, which
/// fixes the accumulation order of fanned-out gradients.
pub struct Graph<T: Real> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            tracked: requires_grad,
            grad: None,
        })
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.assert_owned(v);
        &self.nodes[v.index()].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.assert_owned(v);
        self.nodes[v.index()].op
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to
    /// a `requires_grad` leaf; `None` for other vars or unreachable leaves.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.assert_owned(v);
        self.nodes[v.index()].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.assert_owned(v);
        self.nodes[v.index()].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.index() >= self.nodes.len() {
            return Err(Error::Graph(format!("{v:?} is not recorded on this graph")));
        }
        Ok(())
    }

    fn assert_owned(&self, v: Var) {
        if let Err(e) = self.check(v) {
            panic!("{e}");
        }
    }

    fn push(&mut self, node: Node<T>) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("graph too large");
        self.nodes.push(node);
        Var {
            graph: self.id,
            index,
        }
    }

    /// Records the output of an op together with its backward rule.
    pub(crate) fn record(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        rule: impl Backward<T> + 'static,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.index()].tracked);
        Ok(self.push(Node {
            op,
            value,
            inputs: inputs.to_vec(),
            rule: tracked.then(|| Box::new(rule) as Box<dyn Backward<T>>),
            requires_grad: false,
            tracked,
            grad: None,
        }))
    }

    /// Populates leaf gradients with `∂loss/∂leaf`.
    ///
    /// Previous leaf gradients are discarded. Gradients reaching a node along
    /// several paths are summed in reverse recording order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        let root = loss.index();
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), T::one()));

        for i in (0..=root).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(rule) = &node.rule {
                let ctx = BackwardCtx {
                    inputs: node.inputs.iter().map(|v| &self.nodes[v.index()].value).collect(),
                    output: &node.value,
                    grad: &grad,
                    needs: node.inputs.iter().map(|v| self.nodes[v.index()].tracked).collect(),
                };
                let input_grads = rule.backward(&ctx);
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
                for (input, g) in node.inputs.iter().zip(input_grads) {
                    let (Some(g), true) = (g, self.nodes[input.index()].tracked) else {
                        continue;
                    };
                    debug_assert_eq!(g.shape(), self.nodes[input.index()].value.shape(), "{}", node.op);
                    match &mut grads[input.index()] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            if self.nodes[i].requires_grad {
                self.nodes[i].grad = Some(grad);
            }
        }
        Ok(())
    }
}

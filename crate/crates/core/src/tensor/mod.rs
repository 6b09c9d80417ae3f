//! A small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and a [`Backward`] rule, so node order is already a topological
//! order. [`Graph::backward`] walks the tape once in reverse. Leaf gradients
//! accumulate across calls; intermediate gradients do not persist.
//!
//! Domain-specific differentiable operations (trilinear LUT fusion, the
//! neighbourhood gather, the Lab statistics used by the losses) live next to
//! the code that owns them and plug in through [`Graph::apply`].

mod checkpoint;
mod conv;
mod ops;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use conv::ConvParams;
pub use optim::{Adam, AdamConfig, Param, ParamId, ParamStore};

use crate::error::{Error, Result};

/// Dense row-major tensor. Four-axis tensors use `batch × channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `[batch, channels, height, width]`, or an error for other ranks.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::Shape(format!("expected a 4-axis tensor, got {:?}", self.shape))),
        }
    }
}

/// Gradient rule of one recorded operation.
///
/// `needs[i]` says whether input `i` wants a gradient; implementations may
/// return `None` for inputs that don't.
pub trait Backward {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

/// Handle to a node of a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

enum Op {
    Leaf,
    Func {
        inputs: Vec<usize>,
        rule: Box<dyn Backward>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

static GRAPH_IDS: AtomicU64 = AtomicU64::new(1);

fn next_graph_id() -> u64 {
    GRAPH_IDS.fetch_add(1, Ordering::Relaxed)
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(usize, ParamId)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: next_graph_id(),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Drops every node. Handles issued before the call become invalid.
    pub fn clear(&mut self) {
        self.id = next_graph_id();
        self.nodes.clear();
        self.params.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::GraphConsumed);
        }
        Ok(v.index)
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter as a trainable leaf. Binding the same
    /// parameter twice returns the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(index, _)) = self.params.iter().find(|(_, p)| *p == id) {
            return Var {
                graph: self.id,
                index,
            };
        }
        let v = self.leaf(store.get(id).value.clone(), true);
        self.params.push((v.index, id));
        v
    }

    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> + '_ {
        self.params
            .iter()
            .map(|&(i, id)| (id, self.nodes[i].grad.as_ref()))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Result<Option<&Tensor>> {
        Ok(self.nodes[self.index(v)?].grad.as_ref())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.index(v)?].requires_grad)
    }

    /// Records `output` as the result of a custom operation over `inputs`.
    pub fn apply(
        &mut self,
        inputs: &[Var],
        output: Tensor,
        rule: impl Backward + 'static,
    ) -> Result<Var> {
        let inputs = inputs
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>>>()?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Node {
            value: output,
            grad: None,
            requires_grad,
            op: Op::Func {
                inputs,
                rule: Box::new(rule),
            },
        }))
    }

    /// Back-propagates from a scalar `loss`, adding into every reachable
    /// leaf gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.index(loss)?;
        let value = &self.nodes[root].value;
        if !value.is_scalar() {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let node = &mut self.nodes[i];
                    match node.grad.as_mut() {
                        Some(acc) => acc.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => {
                            node.grad = Some(Tensor {
                                shape: node.value.shape.clone(),
                                data: g,
                            })
                        }
                    }
                }
                Op::Func { inputs, rule } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|&j| &self.nodes[j].value).collect();
                    let needs: Vec<bool> = inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
                    let contribs = rule.backward(&values, &node.value, &g, &needs);
                    for ((&j, contrib), need) in inputs.iter().zip(contribs).zip(needs) {
                        let (Some(c), true) = (contrib, need) else { continue };
                        debug_assert_eq!(c.len(), self.nodes[j].value.numel());
                        match grads[j].as_mut() {
                            Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                            None => grads[j] = Some(c),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Zeroes every leaf gradient.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }
}

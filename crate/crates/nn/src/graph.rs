//! Dynamically recorded operation graph with reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its value and the
//! information needed to differentiate it. Node ids are assigned in
//! execution order, so walking ids backwards is a valid reverse
//! topological order. Gradients from several consumers accumulate by
//! addition.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backward;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: usize,
        slope: f64,
    },
    Prelu {
        x: usize,
        a: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Arc<Tensor>,
        inv_std: Vec<f64>,
        /// Statistics came from this batch (and so depend on `x`).
        train: bool,
    },
    PixelShuffle {
        x: usize,
        r: usize,
    },
    PixelUnshuffle {
        x: usize,
        r: usize,
    },
    Dense {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    SpectralNorm {
        w: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        sigma: f64,
        sigma_floored: bool,
    },
    UpsampleNearest {
        x: usize,
        scale: usize,
    },
    UpsampleBilinear {
        x: usize,
        scale: usize,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        k: f64,
    },
    AddScalar {
        x: usize,
    },
    /// `x - s` where `s` holds a single value.
    SubScalarVar {
        x: usize,
        s: usize,
    },
    Concat {
        parts: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    Abs {
        x: usize,
    },
    Softplus {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Sum {
        x: usize,
    },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv2d { x, w, b, .. } | Dense { x, w, b } => {
                let mut p = vec![*x, *w];
                p.extend(b);
                p
            }
            Prelu { x, a } => vec![*x, *a],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            SpectralNorm { w, .. } => vec![*w],
            Add { a, b } | Sub { a, b } | Mul { a, b } => vec![*a, *b],
            SubScalarVar { x, s } => vec![*x, *s],
            Concat { parts } => parts.clone(),
            LeakyRelu { x, .. }
            | PixelShuffle { x, .. }
            | PixelUnshuffle { x, .. }
            | UpsampleNearest { x, .. }
            | UpsampleBilinear { x, .. }
            | MaxPool2 { x, .. }
            | Scale { x, .. }
            | AddScalar { x }
            | Reshape { x }
            | Abs { x }
            | Softplus { x }
            | Sigmoid { x }
            | Mean { x }
            | Sum { x } => vec![*x],
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Arc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    named: RefCell<Vec<(String, usize)>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Non-differentiable leaf.
    pub fn input(&self, t: Tensor) -> Var<'_> {
        self.constant(Arc::new(t))
    }

    pub fn constant(&self, t: Arc<Tensor>) -> Var<'_> {
        self.push_leaf(t, false)
    }

    /// Differentiable anonymous leaf.
    pub fn variable(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(Arc::new(t), true)
    }

    /// Differentiable leaf registered under `name` for [`Gradients::named`].
    pub fn param(&self, name: &str, t: Arc<Tensor>) -> Var<'_> {
        let v = self.push_leaf(t, true);
        self.named.borrow_mut().push((name.to_string(), v.id));
        v
    }

    fn push_leaf(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.parents().iter().any(|&p| nodes[p].requires_grad);
        // Constant sub-expressions do not need their backward data.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Differentiates the single-element `loss` with respect to every
    /// differentiable leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return shape_err(
                "backward",
                format!("loss must hold one value, got {:?}", root.value.shape()),
            );
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        let mut leaves = BTreeMap::new();
        pending[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(gout) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves.insert(id, gout);
                continue;
            }
            let needs = |p: usize| nodes[p].requires_grad;
            let value_of = |p: usize| nodes[p].value.clone();
            for (pid, g) in backward::backward(&node.op, &node.value, &gout, &value_of, &needs)? {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut pending[pid] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let named = self
            .named
            .borrow()
            .iter()
            .map(|(n, id)| (n.clone(), *id))
            .collect();
        Ok(Gradients { leaves, named })
    }
}

/// Gradients of a scalar with respect to the differentiable leaves of a graph.
pub struct Gradients {
    leaves: BTreeMap<usize, Tensor>,
    named: Vec<(String, usize)>,
}

impl Gradients {
    /// Gradient for a leaf; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(&v.id)
    }

    /// Gradients of leaves registered with [`Graph::param`], keyed by name.
    /// A parameter bound more than once receives the sum of its gradients.
    pub fn named(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, id) in &self.named {
            if let Some(g) = self.leaves.get(id) {
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Same value, cut off from gradient flow.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.value())
    }

    /// Single-element value.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }
}

//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation executed on it as a node holding the
//! forward value and whatever context the backward rule needs. Nodes are
//! appended in execution order, which is a topological order, so
//! [`Tape::backward`] is a single reverse sweep that visits each node once.
//! A fresh tape is built for every forward pass.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{contract_err, Result};
use crate::tensor::{check_shape, Tensor};

mod image;
mod ops;

pub use image::{conv_output_len, ConvGeom};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    MatMulNT { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { a: usize, rows: usize, cols: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddBias { a: usize, bias: usize, d: usize },
    AddConst { a: usize },
    Scale { a: usize, s: f64 },
    Sum { a: usize },
    Mean { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    Softmax { a: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, d: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Reshape { a: usize },
    Narrow { a: usize, outer: usize, len_in: usize, start: usize, len: usize, inner: usize },
    Concat { parts: Vec<(usize, usize)>, outer: usize, total: usize, inner: usize },
    Dropout { a: usize, mask: Vec<f64> },
    MseLoss { pred: usize, target: usize },
    Conv2d { input: usize, kernel: usize, bias: usize, geom: ConvGeom },
    MaxPool2d { a: usize, argmax: Vec<usize> },
    UpsampleNearest { a: usize, planes: usize, h: usize, w: usize, factor: usize },
    UpsampleBilinear { a: usize, planes: usize, h: usize, w: usize, factor: usize },
    PadCrop { a: usize, planes: usize, h: usize, w: usize, out_h: usize, out_w: usize },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Gradient buffers for one backward sweep, indexed by node.
pub(crate) struct Grads<'a> {
    nodes: &'a [Node],
    slots: Vec<Option<Vec<f64>>>,
}

impl<'a> Grads<'a> {
    /// Zero-initialised accumulator for node `idx`, or `None` when that
    /// node does not participate in differentiation.
    pub fn slot(&mut self, idx: usize) -> Option<&mut [f64]> {
        if !self.nodes[idx].requires_grad {
            return None;
        }
        let len = self.nodes[idx].data.len();
        Some(self.slots[idx].get_or_insert_with(|| vec![0.0; len]))
    }

    pub fn data(&self, idx: usize) -> &'a [f64] {
        &self.nodes[idx].data
    }
}

/// Recorded computation. See the module docs.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index as usize
    }

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[self.idx(v)]
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = match &op {
            Op::Leaf => false,
            op => op_inputs(op).iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.push_node(Node { shape, data, op, requires_grad })
    }

    fn push_node(&mut self, node: Node) -> Var {
        let index = self.nodes.len();
        self.nodes.push(node);
        self.leaf_grads.push(None);
        Var { tape: self.id, index: index as u32 }
    }

    /// Records a copy of `t` as a leaf. Differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_node(Node {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad,
        })
    }

    /// Non-differentiable leaf built from raw parts.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        let shape = t.shape().to_vec();
        Ok(self.push_node(Node { shape, data: t.into_data(), op: Op::Leaf, requires_grad: false }))
    }

    /// Records `t` as a leaf and stores the handle in `t.tape_id`, so layers
    /// can later look it up with [`Tape::var_of`].
    pub fn bind(&mut self, t: &mut Tensor) -> Var {
        let v = self.leaf(t);
        t.tape_id = Some(v);
        v
    }

    /// Handle of a tensor previously bound to this tape.
    pub fn var_of(&self, t: &Tensor) -> Result<Var> {
        match t.tape_id {
            Some(v) if v.tape == self.id && (v.index as usize) < self.nodes.len() => {
                let node = &self.nodes[v.index as usize];
                if node.shape.as_slice() != t.shape() {
                    return Err(contract_err!("bound tensor shape changed since binding"));
                }
                Ok(v)
            }
            _ => Err(contract_err!(
                "tensor of shape {:?} is not bound to this tape",
                t.shape()
            )),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.data.clone()).expect("node shapes are validated on creation")
    }

    /// Gradient accumulated on a differentiable leaf by [`Tape::backward`].
    /// Intermediate nodes do not retain gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let i = self.idx(v);
        self.leaf_grads[i].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Back-propagates from a scalar `loss`, adding into every
    /// differentiable leaf's gradient. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss);
        if self.nodes[li].data.len() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].shape
            ));
        }
        let mut grads = Grads { nodes: &self.nodes, slots: vec![None; li + 1] };
        if self.nodes[li].requires_grad {
            grads.slots[li] = Some(vec![1.0]);
        }
        for i in (0..=li).rev() {
            let Some(up) = grads.slots[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    let dst = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; up.len()]);
                    dst.iter_mut().zip(&up).for_each(|(d, u)| *d += u);
                }
                op => backward_op(op, &node.data, &up, &mut grads),
            }
        }
        for (node, g) in self.nodes.iter().zip(self.leaf_grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(vec![0.0; node.data.len()]);
            }
        }
        Ok(())
    }

    pub(crate) fn check_len(len: usize, shape: &[usize]) -> Result<()> {
        let n = check_shape(shape)?;
        if n != len {
            return Err(crate::error::dim_err!("cannot view {} values as {:?}", len, shape));
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { a, b, .. }
        | Op::MatMulNT { a, b, .. }
        | Op::Add { a, b }
        | Op::Sub { a, b }
        | Op::Mul { a, b } => vec![*a, *b],
        Op::AddBias { a, bias, .. } => vec![*a, *bias],
        Op::MseLoss { pred, target } => vec![*pred, *target],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Conv2d { input, kernel, bias, .. } => vec![*input, *kernel, *bias],
        Op::Concat { parts, .. } => parts.iter().map(|p| p.0).collect(),
        Op::Transpose { a, .. }
        | Op::AddConst { a }
        | Op::Scale { a, .. }
        | Op::Sum { a }
        | Op::Mean { a }
        | Op::Tanh { a }
        | Op::Relu { a }
        | Op::Softmax { a, .. }
        | Op::Reshape { a }
        | Op::Narrow { a, .. }
        | Op::Dropout { a, .. }
        | Op::MaxPool2d { a, .. }
        | Op::UpsampleNearest { a, .. }
        | Op::UpsampleBilinear { a, .. }
        | Op::PadCrop { a, .. } => vec![*a],
    }
}

fn backward_op(op: &Op, out: &[f64], up: &[f64], g: &mut Grads<'_>) {
    match op {
        Op::Leaf => {}
        Op::Conv2d { input, kernel, bias, geom } => {
            image::conv2d_backward(*input, *kernel, *bias, geom, up, g)
        }
        Op::MaxPool2d { a, argmax } => image::maxpool_backward(*a, argmax, up, g),
        Op::UpsampleNearest { a, planes, h, w, factor } => {
            image::upsample_nearest_backward(*a, *planes, *h, *w, *factor, up, g)
        }
        Op::UpsampleBilinear { a, planes, h, w, factor } => {
            image::upsample_bilinear_backward(*a, *planes, *h, *w, *factor, up, g)
        }
        Op::PadCrop { a, planes, h, w, out_h, out_w } => {
            image::pad_crop_backward(*a, *planes, *h, *w, *out_h, *out_w, up, g)
        }
        op => ops::backward(op, out, up, g),
    }
}

//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. The
//! tape is rebuilt for each forward pass; [`Tape::backward`] walks it in
//! reverse and accumulates gradients into the leaves that were registered
//! with `requires_grad`. Gradients keep accumulating across backward calls
//! until [`Tape::zero_grad`].

mod kernels;

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub(crate) use kernels::{gemm_nn, gemm_nt, gemm_tn};
use kernels::{col2im_add, im2col, ConvGeom};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// `b` broadcast along axis 1 of `a`.
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    Abs(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: usize,
        argmax: Vec<usize>,
    },
    Embed {
        table: usize,
        indices: Vec<usize>,
    },
    Reshape(usize),
    SelectStep {
        input: usize,
        step: usize,
    },
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Embed { .. } => "embed_lookup",
            Op::Reshape(..) => "reshape",
            Op::SelectStep { .. } => "select_step",
            Op::Dropout { .. } => "dropout",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf tensor.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Registers a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Propagates d(loss)/d(node) back to every `requires_grad` leaf that
    /// `loss` depends on, adding into any gradient already stored there.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::invalid("backward: loss belongs to a different tape"));
        }
        let mut leaf_updates: Vec<(usize, Vec<f64>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if !root.value.is_scalar() {
                return Err(Error::NotScalar(root.value.shape().to_vec()));
            }
            if matches!(root.op, Op::Leaf) {
                return Err(Error::Detached);
            }
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
            grads[loss.id] = Some(vec![1.0]);
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_updates.push((id, g));
                    continue;
                }
                backprop_node(&nodes, node, &g, &mut grads);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_updates {
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                        *e += v;
                    }
                }
                None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(&contrib) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| &nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if needs(*a) {
                let mut da = vec![0.0; m * k];
                gemm_nt(g, bv.data(), m, n, k, &mut da);
                accumulate(nodes, grads, *a, da);
            }
            if needs(*b) {
                let mut db = vec![0.0; k * n];
                gemm_tn(av.data(), g, k, m, n, &mut db);
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            accumulate(nodes, grads, *b, g.to_vec());
        }
        Op::AddBias(a, b) => {
            accumulate(nodes, grads, *a, g.to_vec());
            if needs(*b) {
                let shape = val(*a).shape();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let mut db = vec![0.0; c];
                for (i, gv) in g.iter().enumerate() {
                    db[(i / inner) % c] += gv;
                }
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let d = g.iter().zip(val(*b).data()).map(|(x, y)| x * y).collect();
                accumulate(nodes, grads, *a, d);
            }
            if needs(*b) {
                let d = g.iter().zip(val(*a).data()).map(|(x, y)| x * y).collect();
                accumulate(nodes, grads, *b, d);
            }
        }
        Op::Scale(a, c) => {
            accumulate(nodes, grads, *a, g.iter().map(|v| c * v).collect());
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, vec![g[0]; val(*a).len()]);
        }
        Op::Abs(a) => {
            let d = val(*a)
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &gv)| sgn(x) * gv)
                .collect();
            accumulate(nodes, grads, *a, d);
        }
        Op::Relu(a) => {
            let d = val(*a)
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, d);
        }
        Op::Tanh(a) => {
            let d = node
                .value
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| (1.0 - y * y) * gv)
                .collect();
            accumulate(nodes, grads, *a, d);
        }
        Op::Sigmoid(a) => {
            let d = node
                .value
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| y * (1.0 - y) * gv)
                .collect();
            accumulate(nodes, grads, *a, d);
        }
        Op::Conv2d {
            input,
            kernel,
            geom,
        } => {
            let xv = val(*input);
            let kv = val(*kernel);
            let batch = xv.shape()[0];
            let out_c = kv.shape()[0];
            let (pl, ol) = (geom.patch_len(), geom.out_len());
            let img = geom.channels * geom.height * geom.width;
            let mut cols = vec![0.0; pl * ol];
            let mut dk = needs(*kernel).then(|| vec![0.0; out_c * pl]);
            let mut dx = needs(*input).then(|| vec![0.0; xv.len()]);
            let mut dcols = vec![0.0; pl * ol];
            for n in 0..batch {
                let gn = &g[n * out_c * ol..(n + 1) * out_c * ol];
                if let Some(dk) = dk.as_mut() {
                    im2col(&xv.data()[n * img..(n + 1) * img], geom, &mut cols);
                    gemm_nt(gn, &cols, out_c, ol, pl, dk);
                }
                if let Some(dx) = dx.as_mut() {
                    dcols.iter_mut().for_each(|v| *v = 0.0);
                    gemm_tn(kv.data(), gn, pl, out_c, ol, &mut dcols);
                    col2im_add(&dcols, geom, &mut dx[n * img..(n + 1) * img]);
                }
            }
            if let Some(dk) = dk {
                accumulate(nodes, grads, *kernel, dk);
            }
            if let Some(dx) = dx {
                accumulate(nodes, grads, *input, dx);
            }
        }
        Op::MaxPool2d { input, argmax } => {
            let mut d = vec![0.0; val(*input).len()];
            for (&src, &gv) in argmax.iter().zip(g) {
                d[src] += gv;
            }
            accumulate(nodes, grads, *input, d);
        }
        Op::Embed { table, indices } => {
            let tv = val(*table);
            let e = tv.shape()[1];
            let mut d = vec![0.0; tv.len()];
            for (pos, &row) in indices.iter().enumerate() {
                for j in 0..e {
                    d[row * e + j] += g[pos * e + j];
                }
            }
            accumulate(nodes, grads, *table, d);
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, g.to_vec()),
        Op::SelectStep { input, step } => {
            let shape = val(*input).shape();
            let (n, t, e) = (shape[0], shape[1], shape[2]);
            let mut d = vec![0.0; n * t * e];
            for b in 0..n {
                let dst = (b * t + step) * e;
                d[dst..dst + e].copy_from_slice(&g[b * e..(b + 1) * e]);
            }
            accumulate(nodes, grads, *input, d);
        }
        Op::Dropout { input, mask } => {
            let d = mask.iter().zip(g).map(|(m, gv)| m * gv).collect();
            accumulate(nodes, grads, *input, d);
        }
        Op::SoftmaxCrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let n = labels.len();
            let c = probs.len() / n;
            let scale = g[0] / n as f64;
            let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (i, &y) in labels.iter().enumerate() {
                d[i * c + y] -= scale;
            }
            accumulate(nodes, grads, *logits, d);
        }
    }
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, Tensor::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient; `None` until a backward pass reaches this leaf.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    fn same_tape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::invalid(format!("{op}: operands live on different tapes")))
        }
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, f);
        self.tape.record(out, op, &[self.id])
    }

    pub fn matmul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs, "matmul")?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(a.data(), b.data(), m, k, n, &mut out);
        drop(nodes);
        self.tape.record(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(self.id, rhs.id),
            &[self.id, rhs.id],
        )
    }

    /// Elementwise sum of same-shaped tensors, or a bias add when `rhs` is a
    /// vector whose length matches axis 1 of `self`.
    pub fn add(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs, "add")?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        let (out, op) = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            (
                Tensor::from_parts(a.shape().to_vec(), data),
                Op::Add(self.id, rhs.id),
            )
        } else if b.shape().len() == 1 && a.shape().len() >= 2 && a.shape()[1] == b.shape()[0] {
            let c = b.len();
            let inner: usize = a.shape()[2..].iter().product();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + b.data()[(i / inner) % c])
                .collect();
            (
                Tensor::from_parts(a.shape().to_vec(), data),
                Op::AddBias(self.id, rhs.id),
            )
        } else {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        };
        drop(nodes);
        self.tape.record(out, op, &[self.id, rhs.id])
    }

    pub fn mul(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs, "mul")?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
        a.expect_same_shape(b, "mul")?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        drop(nodes);
        self.tape
            .record(out, Op::Mul(self.id, rhs.id), &[self.id, rhs.id])
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |t| t.scale(c))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |t| Tensor::scalar(t.sum()))
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary(Op::Abs(self.id), |t| t.map(f64::abs))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |t| t.map(|v| if v > 0.0 { v } else { 0.0 }))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), |t| t.map(f64::tanh))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), |t| t.map(|v| 1.0 / (1.0 + (-v).exp())))
    }

    /// Valid (unpadded) 2-D convolution of an `[N,C,H,W]` batch with an
    /// `[O,C,kh,kw]` kernel.
    pub fn conv2d(&self, kernel: &Var<'t>, stride: usize) -> Result<Var<'t>> {
        self.same_tape(kernel, "conv2d")?;
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        let nodes = self.tape.nodes.borrow();
        let (x, k) = (&nodes[self.id].value, &nodes[kernel.id].value);
        let (xs, ks) = (x.shape(), k.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || ks[2] > xs[2] || ks[3] > xs[3] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ks[2],
            kw: ks[3],
            stride,
            out_h: (xs[2] - ks[2]) / stride + 1,
            out_w: (xs[3] - ks[3]) / stride + 1,
        };
        let (batch, out_c) = (xs[0], ks[0]);
        let (pl, ol) = (geom.patch_len(), geom.out_len());
        let img = geom.channels * geom.height * geom.width;
        let mut cols = vec![0.0; pl * ol];
        let mut out = vec![0.0; batch * out_c * ol];
        for n in 0..batch {
            im2col(&x.data()[n * img..(n + 1) * img], &geom, &mut cols);
            gemm_nn(
                k.data(),
                &cols,
                out_c,
                pl,
                ol,
                &mut out[n * out_c * ol..(n + 1) * out_c * ol],
            );
        }
        drop(nodes);
        self.tape.record(
            Tensor::from_parts(vec![batch, out_c, geom.out_h, geom.out_w], out),
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geom,
            },
            &[self.id, kernel.id],
        )
    }

    /// Non-overlapping max pooling over `window x window` blocks of an
    /// `[N,C,H,W]` tensor. Ties go to the first maximum in scan order.
    pub fn maxpool2d(&self, window: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let x = &nodes[self.id].value;
        let s = x.shape();
        if window == 0 || s.len() != 4 || s[2] < window || s[3] < window {
            return Err(Error::ShapeMismatch {
                op: "maxpool2d",
                lhs: s.to_vec(),
                rhs: vec![window, window],
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / window, w / window);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * window + dy) * w + ox * window + dx;
                            if x.data()[idx] > best {
                                best = x.data()[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
        drop(nodes);
        self.tape.record(
            Tensor::from_parts(vec![n, c, oh, ow], out),
            Op::MaxPool2d {
                input: self.id,
                argmax,
            },
            &[self.id],
        )
    }

    /// Gathers rows of a `[V,E]` table. The output shape is
    /// `index_shape ++ [E]`.
    pub fn embed_lookup(&self, indices: &[usize], index_shape: &[usize]) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let table = &nodes[self.id].value;
        let ts = table.shape();
        if ts.len() != 2 || index_shape.iter().product::<usize>() != indices.len() {
            return Err(Error::ShapeMismatch {
                op: "embed_lookup",
                lhs: ts.to_vec(),
                rhs: index_shape.to_vec(),
            });
        }
        let (v, e) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::invalid(format!(
                "embed_lookup: index {bad} out of range for vocabulary {v}"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            out.extend_from_slice(&table.data()[i * e..(i + 1) * e]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(e);
        drop(nodes);
        self.tape.record(
            Tensor::from_parts(shape, out),
            Op::Embed {
                table: self.id,
                indices: indices.to_vec(),
            },
            &[self.id],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let len = self.tape.with_value(self.id, Tensor::len);
        if shape.iter().product::<usize>() != len || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: shape.to_vec(),
            });
        }
        self.unary(Op::Reshape(self.id), |t| {
            Tensor::from_parts(shape.to_vec(), t.data().to_vec())
        })
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[shape[0], rest.max(1)])
    }

    /// Slice `[:, step, :]` of an `[N,T,E]` tensor.
    pub fn select_step(&self, step: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 3 || step >= shape[1] {
            return Err(Error::ShapeMismatch {
                op: "select_step",
                lhs: shape,
                rhs: vec![step],
            });
        }
        let (n, t, e) = (shape[0], shape[1], shape[2]);
        self.unary(Op::SelectStep { input: self.id, step }, |x| {
            let mut out = Vec::with_capacity(n * e);
            for b in 0..n {
                let src = (b * t + step) * e;
                out.extend_from_slice(&x.data()[src..src + e]);
            }
            Tensor::from_parts(vec![n, e], out)
        })
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; otherwise
    /// (or with `rate = 0`) the input handle is returned unchanged.
    pub fn dropout(&self, rate: f64, rng: &mut Rng, training: bool) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout: rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(*self);
        }
        let keep = 1.0 / (1.0 - rate);
        let len = self.tape.with_value(self.id, Tensor::len);
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
            .collect();
        let out = self.tape.with_value(self.id, |x| {
            Tensor::from_parts(
                x.shape().to_vec(),
                x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
            )
        });
        self.tape.record(
            out,
            Op::Dropout {
                input: self.id,
                mask,
            },
            &[self.id],
        )
    }

    /// Mean cross-entropy of `[N,C]` logits against class indices.
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let z = &nodes[self.id].value;
        let s = z.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: label {bad} is not a class index below {c}"
            )));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &z.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - row[labels[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        drop(nodes);
        self.tape.record(
            Tensor::scalar(total / n as f64),
            Op::SoftmaxCrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
            &[self.id],
        )
    }
}

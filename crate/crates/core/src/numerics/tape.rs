//! Recording executor. Every op appends a node holding its forward value and
//! enough bookkeeping to run the chain rule in reverse. `backward` consumes
//! the tape, so a recorded graph can never be replayed against parameters
//! that have since been updated.

use std::rc::Rc;

use super::graph::{self, Graph, IndexMap, Padding};
use super::kernels::{self, ConvGeom, LayerNormSaved};
use super::tensor::Tensor;
use super::{NumericsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, tb: bool },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddBias { a: usize, b: usize },
    Scale { a: usize, c: f32 },
    LayerNorm { x: usize, gamma: usize, beta: usize, saved: LayerNormSaved, k: usize },
    SoftmaxLast { x: usize },
    Gelu { x: usize },
    LeakyRelu { x: usize, slope: f32 },
    Sigmoid { x: usize },
    Abs { x: usize },
    Conv2d { x: usize, w: usize, geom: ConvGeom, cout: usize },
    ConvTranspose { y: usize, w: usize, geom: ConvGeom, cout: usize },
    Gather { x: usize, map: Rc<IndexMap> },
    Reshape { x: usize },
    ConcatLast { a: usize, b: usize, ka: usize, kb: usize },
    MeanAll { x: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<NodeId> {
        graph::check_finite(name, &value)?;
        let requires_grad = match &op {
            Op::Leaf => value.requires_grad(),
            _ => self.inputs_of(&op).iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op) -> Vec<usize> {
        match *op {
            Op::Leaf => vec![],
            Op::Matmul { a, b, .. }
            | Op::Bmm { a, b, .. }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::AddBias { a, b }
            | Op::ConcatLast { a, b, .. } => vec![a, b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Conv2d { x, w, .. } => vec![x, w],
            Op::ConvTranspose { y, w, .. } => vec![y, w],
            Op::Scale { a, .. } => vec![a],
            Op::SoftmaxLast { x }
            | Op::Gelu { x }
            | Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Abs { x }
            | Op::Gather { x, .. }
            | Op::Reshape { x }
            | Op::MeanAll { x } => vec![x],
        }
    }

    /// Reverse sweep from a scalar loss. Consumes the tape and returns one
    /// gradient slot per node; leaves that the loss never reached stay zero.
    pub fn backward(mut self, loss: NodeId) -> Result<Gradients> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(dy); // keep leaf gradients for extraction
                continue;
            }
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &dy, &mut grads);
        }
        for g in grads.iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite { context: "backward".into() });
            }
        }
        Ok(Gradients { slots: grads })
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn propagate(&self, i: usize, op: &Op, dy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let val = |idx: usize| self.nodes[idx].value.data();
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b, m, k, n } => {
                if self.wants(a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, dy, false, val(b), true, 0.0, &mut da);
                    accum(&mut grads[a], da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, val(a), true, dy, false, 0.0, &mut db);
                    accum(&mut grads[b], db);
                }
            }
            Op::Bmm { a, b, batch, m, k, n, tb } => {
                if self.wants(a) {
                    let mut da = vec![0.0; batch * m * k];
                    for t in 0..batch {
                        kernels::gemm(
                            m,
                            n,
                            k,
                            &dy[t * m * n..(t + 1) * m * n],
                            false,
                            &val(b)[t * k * n..(t + 1) * k * n],
                            !tb,
                            0.0,
                            &mut da[t * m * k..(t + 1) * m * k],
                        );
                    }
                    accum(&mut grads[a], da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; batch * k * n];
                    for t in 0..batch {
                        let dyt = &dy[t * m * n..(t + 1) * m * n];
                        let at = &val(a)[t * m * k..(t + 1) * m * k];
                        let dbt = &mut db[t * k * n..(t + 1) * k * n];
                        if tb {
                            // b stored [n, k]: db = dyᵀ·a reshaped to storage
                            kernels::gemm(n, m, k, dyt, true, at, false, 0.0, dbt);
                        } else {
                            kernels::gemm(k, m, n, at, true, dyt, false, 0.0, dbt);
                        }
                    }
                    accum(&mut grads[b], db);
                }
            }
            Op::Add { a, b } => {
                if self.wants(a) {
                    accum(&mut grads[a], dy.to_vec());
                }
                if self.wants(b) {
                    accum(&mut grads[b], dy.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(a) {
                    accum(&mut grads[a], dy.to_vec());
                }
                if self.wants(b) {
                    accum(&mut grads[b], dy.iter().map(|v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if self.wants(a) {
                    accum(&mut grads[a], dy.iter().zip(val(b)).map(|(d, v)| d * v).collect());
                }
                if self.wants(b) {
                    accum(&mut grads[b], dy.iter().zip(val(a)).map(|(d, v)| d * v).collect());
                }
            }
            Op::AddBias { a, b } => {
                if self.wants(a) {
                    accum(&mut grads[a], dy.to_vec());
                }
                if self.wants(b) {
                    let s = self.nodes[b].value.numel();
                    let mut db = vec![0.0; s];
                    for (i, d) in dy.iter().enumerate() {
                        db[i % s] += d;
                    }
                    accum(&mut grads[b], db);
                }
            }
            Op::Scale { a, c } => {
                if self.wants(a) {
                    accum(&mut grads[a], dy.iter().map(|d| d * c).collect());
                }
            }
            Op::LayerNorm { x, gamma, beta, ref saved, k } => {
                let (dx, dgamma, dbeta) = kernels::layer_norm_backward(dy, val(gamma), saved, k);
                if self.wants(x) {
                    accum(&mut grads[x], dx);
                }
                if self.wants(gamma) {
                    accum(&mut grads[gamma], dgamma);
                }
                if self.wants(beta) {
                    accum(&mut grads[beta], dbeta);
                }
            }
            Op::SoftmaxLast { x } => {
                if self.wants(x) {
                    let y = &self.nodes[i].value;
                    let axis = y.rank() - 1;
                    accum(&mut grads[x], kernels::softmax_backward(dy, y.data(), y.shape(), axis));
                }
            }
            Op::Gelu { x } => {
                if self.wants(x) {
                    accum(
                        &mut grads[x],
                        dy.iter().zip(val(x)).map(|(d, &v)| d * kernels::gelu_grad(v)).collect(),
                    );
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.wants(x) {
                    accum(
                        &mut grads[x],
                        dy.iter()
                            .zip(val(x))
                            .map(|(d, &v)| d * kernels::leaky_relu_grad(v, slope))
                            .collect(),
                    );
                }
            }
            Op::Sigmoid { x } => {
                if self.wants(x) {
                    let y = self.nodes[i].value.data();
                    accum(&mut grads[x], dy.iter().zip(y).map(|(d, &s)| d * s * (1.0 - s)).collect());
                }
            }
            Op::Abs { x } => {
                if self.wants(x) {
                    accum(
                        &mut grads[x],
                        dy.iter()
                            .zip(val(x))
                            .map(|(d, &v)| if v > 0.0 { *d } else if v < 0.0 { -d } else { 0.0 })
                            .collect(),
                    );
                }
            }
            Op::Conv2d { x, w, ref geom, cout } => {
                if self.wants(x) {
                    accum(&mut grads[x], kernels::conv2d_transpose(dy, val(w), geom, cout));
                }
                if self.wants(w) {
                    accum(&mut grads[w], kernels::conv2d_grad_w(val(x), dy, geom, cout));
                }
            }
            Op::ConvTranspose { y, w, ref geom, cout } => {
                if self.wants(y) {
                    accum(&mut grads[y], kernels::conv2d(dy, val(w), geom, cout));
                }
                if self.wants(w) {
                    accum(&mut grads[w], kernels::conv2d_grad_w(dy, val(y), geom, cout));
                }
            }
            Op::Gather { x, ref map } => {
                if self.wants(x) {
                    let batch = self.nodes[x].value.numel() / map.in_numel;
                    let per_out = map.indices.len();
                    let mut dx = vec![0.0; batch * map.in_numel];
                    for b in 0..batch {
                        let dyb = &dy[b * per_out..(b + 1) * per_out];
                        let dxb = &mut dx[b * map.in_numel..(b + 1) * map.in_numel];
                        for (o, &src) in map.indices.iter().enumerate() {
                            dxb[src] += dyb[o];
                        }
                    }
                    accum(&mut grads[x], dx);
                }
            }
            Op::Reshape { x } => {
                if self.wants(x) {
                    accum(&mut grads[x], dy.to_vec());
                }
            }
            Op::ConcatLast { a, b, ka, kb } => {
                let rows = dy.len() / (ka + kb);
                if self.wants(a) {
                    let mut da = vec![0.0; rows * ka];
                    for r in 0..rows {
                        da[r * ka..(r + 1) * ka]
                            .copy_from_slice(&dy[r * (ka + kb)..r * (ka + kb) + ka]);
                    }
                    accum(&mut grads[a], da);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; rows * kb];
                    for r in 0..rows {
                        db[r * kb..(r + 1) * kb]
                            .copy_from_slice(&dy[r * (ka + kb) + ka..(r + 1) * (ka + kb)]);
                    }
                    accum(&mut grads[b], db);
                }
            }
            Op::MeanAll { x } => {
                if self.wants(x) {
                    let n = self.nodes[x].value.numel();
                    accum(&mut grads[x], vec![dy[0] / n as f32; n]);
                }
            }
        }
    }
}

fn accum(slot: &mut Option<Vec<f32>>, delta: Vec<f32>) {
    match slot {
        Some(g) => {
            debug_assert_eq!(g.len(), delta.len());
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
        None => *slot = Some(delta),
    }
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f32]> {
        self.slots[id.0].as_deref()
    }

    /// Gradient as a tensor of the parameter's shape; zero if the loss never
    /// reached this node.
    pub fn take(&mut self, id: NodeId, shape: &[usize]) -> Result<Tensor> {
        match self.slots[id.0].take() {
            Some(buf) => Tensor::new(shape.to_vec(), buf),
            None => Ok(Tensor::zeros(shape.to_vec())),
        }
    }
}

impl Graph for Tape {
    type V = NodeId;

    fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        self.push("constant", t, Op::Leaf)
    }

    fn shape(&self, v: &NodeId) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let (out, d) = graph::matmul_fwd(self.value(*a), self.value(*b))?;
        self.push("matmul", out, Op::Matmul { a: a.0, b: b.0, m: d.m, k: d.k, n: d.n })
    }

    fn bmm(&mut self, a: &NodeId, b: &NodeId, transpose_b: bool) -> Result<NodeId> {
        let (out, d) = graph::bmm_fwd(self.value(*a), self.value(*b), transpose_b)?;
        self.push(
            "bmm",
            out,
            Op::Bmm { a: a.0, b: b.0, batch: d.batch, m: d.m, k: d.k, n: d.n, tb: d.tb },
        )
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let out = graph::zip_fwd("add", self.value(*a), self.value(*b), |x, y| x + y)?;
        self.push("add", out, Op::Add { a: a.0, b: b.0 })
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let out = graph::zip_fwd("sub", self.value(*a), self.value(*b), |x, y| x - y)?;
        self.push("sub", out, Op::Sub { a: a.0, b: b.0 })
    }

    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let out = graph::zip_fwd("mul", self.value(*a), self.value(*b), |x, y| x * y)?;
        self.push("mul", out, Op::Mul { a: a.0, b: b.0 })
    }

    fn add_bias(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let out = graph::add_bias_fwd(self.value(*a), self.value(*b))?;
        self.push("add_bias", out, Op::AddBias { a: a.0, b: b.0 })
    }

    fn scale(&mut self, a: &NodeId, c: f32) -> Result<NodeId> {
        let data = self.value(*a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::raw(self.value(*a).shape().to_vec(), data);
        self.push("scale", out, Op::Scale { a: a.0, c })
    }

    fn layer_norm(&mut self, x: &NodeId, gamma: &NodeId, beta: &NodeId) -> Result<NodeId> {
        let (out, saved, k) =
            graph::layer_norm_fwd(self.value(*x), self.value(*gamma), self.value(*beta))?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, saved, k },
        )
    }

    fn softmax_last(&mut self, x: &NodeId) -> Result<NodeId> {
        let v = self.value(*x);
        let axis = v.rank() - 1;
        let out = Tensor::raw(v.shape().to_vec(), kernels::softmax(v.data(), v.shape(), axis));
        self.push("softmax", out, Op::SoftmaxLast { x: x.0 })
    }

    fn gelu(&mut self, x: &NodeId) -> Result<NodeId> {
        let v = self.value(*x);
        let out = Tensor::raw(v.shape().to_vec(), v.data().iter().map(|&t| kernels::gelu(t)).collect());
        self.push("gelu", out, Op::Gelu { x: x.0 })
    }

    fn leaky_relu(&mut self, x: &NodeId, slope: f32) -> Result<NodeId> {
        let v = self.value(*x);
        let out = Tensor::raw(
            v.shape().to_vec(),
            v.data().iter().map(|&t| kernels::leaky_relu(t, slope)).collect(),
        );
        self.push("leaky_relu", out, Op::LeakyRelu { x: x.0, slope })
    }

    fn sigmoid(&mut self, x: &NodeId) -> Result<NodeId> {
        let v = self.value(*x);
        let out =
            Tensor::raw(v.shape().to_vec(), v.data().iter().map(|&t| kernels::sigmoid(t)).collect());
        self.push("sigmoid", out, Op::Sigmoid { x: x.0 })
    }

    fn abs(&mut self, x: &NodeId) -> Result<NodeId> {
        let v = self.value(*x);
        let out = Tensor::raw(v.shape().to_vec(), v.data().iter().map(|t| t.abs()).collect());
        self.push("abs", out, Op::Abs { x: x.0 })
    }

    fn conv2d(&mut self, x: &NodeId, w: &NodeId, stride: usize, padding: Padding) -> Result<NodeId> {
        let (out, geom, cout) = graph::conv2d_fwd(self.value(*x), self.value(*w), stride, padding)?;
        self.push("conv2d", out, Op::Conv2d { x: x.0, w: w.0, geom, cout })
    }

    fn conv2d_transpose(&mut self, y: &NodeId, w: &NodeId, stride: usize) -> Result<NodeId> {
        let (out, geom, cout) =
            graph::conv2d_transpose_fwd(self.value(*y), self.value(*w), stride)?;
        self.push("conv2d_transpose", out, Op::ConvTranspose { y: y.0, w: w.0, geom, cout })
    }

    fn gather(&mut self, x: &NodeId, map: &Rc<IndexMap>) -> Result<NodeId> {
        let out = graph::gather_fwd(self.value(*x), map)?;
        self.push("gather", out, Op::Gather { x: x.0, map: Rc::clone(map) })
    }

    fn reshape(&mut self, x: &NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.value(*x).reshaped(shape)?;
        self.push("reshape", out, Op::Reshape { x: x.0 })
    }

    fn concat_last(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let (out, ka, kb) = graph::concat_last_fwd(self.value(*a), self.value(*b))?;
        self.push("concat_last", out, Op::ConcatLast { a: a.0, b: b.0, ka, kb })
    }

    fn mean_all(&mut self, x: &NodeId) -> Result<NodeId> {
        let v = self.value(*x);
        let sum = v.data().iter().fold(0.0f64, |acc, &t| acc + t as f64);
        let m = (sum / v.numel().max(1) as f64) as f32;
        self.push("mean_all", Tensor::scalar(m), Op::MeanAll { x: x.0 })
    }
}

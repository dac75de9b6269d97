//! The `Graph` trait is the single surface the network code is written
//! against. `Eager` runs ops immediately and drops intermediates (inference);
//! `Tape` records them for reverse-mode differentiation (training). Forward
//! shape checking lives here so both executors agree exactly.

use std::rc::Rc;

use super::kernels::{self, ConvGeom, LayerNormSaved};
use super::tensor::Tensor;
use super::{NumericsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// A precomputed element-routing table applied per batch element:
/// `out[b, i] = in[b, indices[i]]` over flattened per-sample data. Built once
/// per block and reused for any batch size; covers patch extraction, head
/// split/merge, and the token regrouping of merging/expanding stages.
#[derive(Debug, Clone)]
pub struct IndexMap {
    pub indices: Vec<usize>,
    pub out_shape: Vec<usize>, // per-sample, batch axis excluded
    pub in_numel: usize,       // per-sample
}

impl IndexMap {
    pub fn new(indices: Vec<usize>, out_shape: Vec<usize>, in_numel: usize) -> IndexMap {
        debug_assert_eq!(indices.len(), out_shape.iter().product::<usize>());
        debug_assert!(indices.iter().all(|&i| i < in_numel));
        IndexMap { indices, out_shape, in_numel }
    }
}

pub trait Graph {
    type V: Clone;

    /// Bind a tensor (input or parameter) into the graph.
    fn constant(&mut self, t: Tensor) -> Result<Self::V>;
    fn shape(&self, v: &Self::V) -> Vec<usize>;

    /// `a` is [... , k] flattened to rows; `b` is [k, n].
    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// Batched [B, m, k] · [B, k, n]; with `transpose_b` the right operand is
    /// stored [B, n, k].
    fn bmm(&mut self, a: &Self::V, b: &Self::V, transpose_b: bool) -> Result<Self::V>;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// Broadcast-add where `b`'s shape is a trailing suffix of `a`'s.
    fn add_bias(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, c: f32) -> Result<Self::V>;

    /// Standardize over the last axis, then apply elementwise gamma/beta.
    fn layer_norm(&mut self, x: &Self::V, gamma: &Self::V, beta: &Self::V) -> Result<Self::V>;
    fn softmax_last(&mut self, x: &Self::V) -> Result<Self::V>;
    fn gelu(&mut self, x: &Self::V) -> Result<Self::V>;
    fn leaky_relu(&mut self, x: &Self::V, slope: f32) -> Result<Self::V>;
    fn sigmoid(&mut self, x: &Self::V) -> Result<Self::V>;
    fn abs(&mut self, x: &Self::V) -> Result<Self::V>;

    /// NHWC conv; `w` is [k, k, cin, cout].
    fn conv2d(&mut self, x: &Self::V, w: &Self::V, stride: usize, padding: Padding)
        -> Result<Self::V>;
    /// Strided upsampling conv, the exact adjoint of a same-padded `conv2d`
    /// with the given stride; `w` is [k, k, cout, cin] and the output grid is
    /// input×stride. Declared kernel size `k` is validated against `w`.
    fn conv2d_transpose(&mut self, y: &Self::V, w: &Self::V, stride: usize) -> Result<Self::V>;

    /// Reroute elements within each batch element; see [`IndexMap`].
    fn gather(&mut self, x: &Self::V, map: &Rc<IndexMap>) -> Result<Self::V>;
    /// Same data, new shape (row-major contiguous, numel preserved).
    fn reshape(&mut self, x: &Self::V, shape: Vec<usize>) -> Result<Self::V>;
    fn concat_last(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mean_all(&mut self, x: &Self::V) -> Result<Self::V>;

    /// Mean absolute error — the training loss.
    fn mae(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        let d = self.sub(a, b)?;
        let d = self.abs(&d)?;
        self.mean_all(&d)
    }
}

// ── Shared forward computation (validation + kernel dispatch) ────────

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

pub(crate) struct MatmulDims {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn matmul_fwd(a: &Tensor, b: &Tensor) -> Result<(Tensor, MatmulDims)> {
    if b.rank() != 2 || a.rank() < 1 || a.shape().last() != Some(&b.shape()[0]) {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let k = b.shape()[0];
    let n = b.shape()[1];
    let m = a.numel() / k;
    let out = kernels::matmul(m, k, n, a.data(), b.data());
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Ok((Tensor::raw(shape, out), MatmulDims { m, k, n }))
}

pub(crate) struct BmmDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub tb: bool,
}

pub(crate) fn bmm_fwd(a: &Tensor, b: &Tensor, tb: bool) -> Result<(Tensor, BmmDims)> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(shape_err("bmm", a.shape(), b.shape()));
    }
    let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bk, n) = if tb { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
    if bk != k {
        return Err(shape_err("bmm", a.shape(), b.shape()));
    }
    let out = kernels::bmm(batch, m, k, n, a.data(), b.data(), tb);
    Ok((Tensor::raw(vec![batch, m, n], out), BmmDims { batch, m, k, n, tb }))
}

pub(crate) fn zip_fwd(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::raw(a.shape().to_vec(), data))
}

pub(crate) fn add_bias_fwd(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if b.rank() > a.rank() || !a.shape().ends_with(b.shape()) {
        return Err(shape_err("add_bias", a.shape(), b.shape()));
    }
    let s = b.numel();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x + b.data()[i % s])
        .collect();
    Ok(Tensor::raw(a.shape().to_vec(), data))
}

pub(crate) fn layer_norm_fwd(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, LayerNormSaved, usize)> {
    let k = *x.shape().last().ok_or_else(|| {
        NumericsError::invalid("layer_norm", "input must have at least one axis")
    })?;
    if gamma.shape() != [k] || beta.shape() != [k] {
        return Err(shape_err("layer_norm", x.shape(), gamma.shape()));
    }
    let (out, saved) = kernels::layer_norm(x.data(), gamma.data(), beta.data(), k, 1e-5);
    Ok((Tensor::raw(x.shape().to_vec(), out), saved, k))
}

pub(crate) fn conv2d_fwd(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, ConvGeom, usize)> {
    if x.rank() != 4 || w.rank() != 4 || w.shape()[0] != w.shape()[1] {
        return Err(shape_err("conv2d", x.shape(), w.shape()));
    }
    let (b, h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, cout) = (w.shape()[0], w.shape()[3]);
    if w.shape()[2] != cin {
        return Err(shape_err("conv2d", x.shape(), w.shape()));
    }
    if stride == 0 {
        return Err(NumericsError::invalid("conv2d", "stride must be positive"));
    }
    let geom = match padding {
        Padding::Same => ConvGeom::same(b, h, wd, cin, k, stride),
        Padding::Valid => {
            if h < k || wd < k {
                return Err(NumericsError::invalid("conv2d", "kernel larger than input"));
            }
            ConvGeom::valid(b, h, wd, cin, k, stride)
        }
    };
    let out = kernels::conv2d(x.data(), w.data(), &geom, cout);
    Ok((Tensor::raw(vec![b, geom.out_h, geom.out_w, cout], out), geom, cout))
}

/// Fine-grid geometry for a transpose conv: the op behaves as the adjoint of
/// a same-padded stride-`s` conv from [B, h·s, w·s, cout] down to the input.
pub(crate) fn conv2d_transpose_fwd(
    y: &Tensor,
    w: &Tensor,
    stride: usize,
) -> Result<(Tensor, ConvGeom, usize)> {
    if y.rank() != 4 || w.rank() != 4 || w.shape()[0] != w.shape()[1] {
        return Err(shape_err("conv2d_transpose", y.shape(), w.shape()));
    }
    let (b, h, wd, cin) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let (k, cout) = (w.shape()[0], w.shape()[2]);
    if w.shape()[3] != cin {
        return Err(shape_err("conv2d_transpose", y.shape(), w.shape()));
    }
    if stride == 0 {
        return Err(NumericsError::invalid("conv2d_transpose", "stride must be positive"));
    }
    let geom = ConvGeom::same(b, h * stride, wd * stride, cout, k, stride);
    debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
    let out = kernels::conv2d_transpose(y.data(), w.data(), &geom, cin);
    Ok((Tensor::raw(vec![b, geom.h, geom.w, cout], out), geom, cin))
}

pub(crate) fn gather_fwd(x: &Tensor, map: &IndexMap) -> Result<Tensor> {
    let batch = *x.shape().first().unwrap_or(&0);
    if batch == 0 || x.numel() / batch != map.in_numel {
        return Err(NumericsError::invalid("gather", "index map built for a different sample size"));
    }
    let per_out = map.indices.len();
    let mut data = Vec::with_capacity(batch * per_out);
    for b in 0..batch {
        let src = &x.data()[b * map.in_numel..(b + 1) * map.in_numel];
        data.extend(map.indices.iter().map(|&i| src[i]));
    }
    let mut shape = Vec::with_capacity(map.out_shape.len() + 1);
    shape.push(batch);
    shape.extend_from_slice(&map.out_shape);
    Ok(Tensor::raw(shape, data))
}

pub(crate) fn concat_last_fwd(a: &Tensor, b: &Tensor) -> Result<(Tensor, usize, usize)> {
    if a.rank() != b.rank()
        || a.rank() < 1
        || a.shape()[..a.rank() - 1] != b.shape()[..b.rank() - 1]
    {
        return Err(shape_err("concat_last", a.shape(), b.shape()));
    }
    let ka = *a.shape().last().unwrap();
    let kb = *b.shape().last().unwrap();
    let rows = a.numel() / ka;
    let mut data = Vec::with_capacity(rows * (ka + kb));
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * ka..(r + 1) * ka]);
        data.extend_from_slice(&b.data()[r * kb..(r + 1) * kb]);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = ka + kb;
    Ok((Tensor::raw(shape, data), ka, kb))
}

pub(crate) fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { context: op.to_string() })
    }
}

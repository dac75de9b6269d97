//! Immediate-mode executor: values are plain tensors, intermediates die as
//! soon as the caller drops them. Used for inference and evaluation, where
//! full-resolution activations would be too large to keep a tape alive.

use std::rc::Rc;

use super::graph::{self, Graph, IndexMap, Padding};
use super::kernels;
use super::tensor::Tensor;
use super::Result;

#[derive(Debug, Default)]
pub struct Eager;

impl Eager {
    pub fn new() -> Eager {
        Eager
    }

    fn done(op: &'static str, t: Tensor) -> Result<Tensor> {
        graph::check_finite(op, &t)?;
        Ok(t)
    }
}

impl Graph for Eager {
    type V = Tensor;

    fn constant(&mut self, t: Tensor) -> Result<Tensor> {
        Ok(t)
    }

    fn shape(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::done("matmul", graph::matmul_fwd(a, b)?.0)
    }

    fn bmm(&mut self, a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
        Self::done("bmm", graph::bmm_fwd(a, b, transpose_b)?.0)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::done("add", graph::zip_fwd("add", a, b, |x, y| x + y)?)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::done("sub", graph::zip_fwd("sub", a, b, |x, y| x - y)?)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::done("mul", graph::zip_fwd("mul", a, b, |x, y| x * y)?)
    }

    fn add_bias(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::done("add_bias", graph::add_bias_fwd(a, b)?)
    }

    fn scale(&mut self, a: &Tensor, c: f32) -> Result<Tensor> {
        let data = a.data().iter().map(|&x| x * c).collect();
        Self::done("scale", Tensor::raw(a.shape().to_vec(), data))
    }

    fn layer_norm(&mut self, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        Self::done("layer_norm", graph::layer_norm_fwd(x, gamma, beta)?.0)
    }

    fn softmax_last(&mut self, x: &Tensor) -> Result<Tensor> {
        let axis = x.rank() - 1;
        let data = kernels::softmax(x.data(), x.shape(), axis);
        Self::done("softmax", Tensor::raw(x.shape().to_vec(), data))
    }

    fn gelu(&mut self, x: &Tensor) -> Result<Tensor> {
        let data = x.data().iter().map(|&v| kernels::gelu(v)).collect();
        Self::done("gelu", Tensor::raw(x.shape().to_vec(), data))
    }

    fn leaky_relu(&mut self, x: &Tensor, slope: f32) -> Result<Tensor> {
        let data = x.data().iter().map(|&v| kernels::leaky_relu(v, slope)).collect();
        Self::done("leaky_relu", Tensor::raw(x.shape().to_vec(), data))
    }

    fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        let data = x.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        Self::done("sigmoid", Tensor::raw(x.shape().to_vec(), data))
    }

    fn abs(&mut self, x: &Tensor) -> Result<Tensor> {
        let data = x.data().iter().map(|v| v.abs()).collect();
        Self::done("abs", Tensor::raw(x.shape().to_vec(), data))
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
        Self::done("conv2d", graph::conv2d_fwd(x, w, stride, padding)?.0)
    }

    fn conv2d_transpose(&mut self, y: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
        Self::done("conv2d_transpose", graph::conv2d_transpose_fwd(y, w, stride)?.0)
    }

    fn gather(&mut self, x: &Tensor, map: &Rc<IndexMap>) -> Result<Tensor> {
        Self::done("gather", graph::gather_fwd(x, map)?)
    }

    fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        x.reshaped(shape)
    }

    fn concat_last(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::done("concat_last", graph::concat_last_fwd(a, b)?.0)
    }

    fn mean_all(&mut self, x: &Tensor) -> Result<Tensor> {
        // f64 accumulator: keeps the reduction's round-off well below the
        // tolerance of finite-difference gradient checks.
        let sum = x.data().iter().fold(0.0f64, |acc, &v| acc + v as f64);
        let m = (sum / x.numel().max(1) as f64) as f32;
        Self::done("mean_all", Tensor::scalar(m))
    }
}

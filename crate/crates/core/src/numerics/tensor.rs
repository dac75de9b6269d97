use super::{NumericsError, Result, Rng};

/// Dense n-dimensional f32 array, row-major.
///
/// `product(shape)` always equals the number of stored values, and values
/// constructed through [`Tensor::new`] are checked finite — NaN/Inf is an
/// error surface here, never a silent state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::invalid(
                "tensor",
                format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { context: format!("tensor literal (value {v})") });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    /// Constructor for op outputs: length is a caller invariant and
    /// finiteness is checked once by the executor, with the op's name.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data, requires_grad: false }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Tensor {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel], requires_grad: false }
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor { shape: vec![], data: vec![value], requires_grad: false }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|i| f(i)).collect();
        Tensor { shape, data, requires_grad: false }
    }

    /// Standard-uniform fill in [lo, hi), for tests and initializers.
    pub fn uniform(shape: Vec<usize>, lo: f32, hi: f32, rng: &mut Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform_in(lo, hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_grad(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    /// Scalar extraction; panics if the tensor is not a single value.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Value at a multi-index (row-major).
    pub fn at(&self, index: &[usize]) -> f32 {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} (dim {dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Same data with a new shape; element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor { shape, data: self.data.clone(), requires_grad: self.requires_grad })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

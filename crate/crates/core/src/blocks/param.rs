//! Named parameter registry. Every tensor gets its own RNG stream derived
//! from (seed, name), so two models that share a parameter name initialize it
//! identically no matter how many other parameters either model has or in
//! which order they are created.

use crate::numerics::{Graph, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

pub struct ParamStore {
    rng: Rng,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64) -> ParamStore {
        ParamStore { rng: Rng::new(seed), names: Vec::new(), tensors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?} — naming is an internal invariant"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Truncated normal (|z| ≤ 2 std), the ViT convention for projections,
    /// positional embeddings and fusion weights.
    pub fn trunc_normal(&mut self, name: impl Into<String>, shape: Vec<usize>, std: f32) -> ParamId {
        let name = name.into();
        let mut rng = self.rng.split(&name);
        let t = Tensor::from_fn(shape, |_| rng.trunc_normal(std));
        self.add(name, t)
    }

    /// He-style uniform over ±√(6/fan_in), used for conv kernels.
    pub fn he_uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let name = name.into();
        let mut rng = self.rng.split(&name);
        let limit = (6.0 / fan_in as f32).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.uniform_in(-limit, limit));
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::filled(shape, 1.0))
    }

    /// Bind every parameter into a graph, in registration order. With
    /// `trainable`, leaves are marked for gradient accumulation (tape use).
    pub fn bind<G: Graph>(&self, g: &mut G, trainable: bool) -> crate::numerics::Result<Bound<G::V>> {
        let mut vals = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let t = if trainable { t.clone().with_grad() } else { t.clone() };
            vals.push(g.constant(t)?);
        }
        Ok(Bound { vals })
    }
}

/// Graph-bound parameter values, indexed by the ids the store handed out.
pub struct Bound<V> {
    vals: Vec<V>,
}

impl<V> Bound<V> {
    /// Assemble from values already bound elsewhere; order must match the
    /// store's registration order.
    pub fn from_values(vals: Vec<V>) -> Bound<V> {
        Bound { vals }
    }

    pub fn get(&self, id: ParamId) -> &V {
        &self.vals[id.0]
    }

    pub fn values(&self) -> &[V] {
        &self.vals
    }
}

/// Dense affine map x·W + b over the last axis.
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let w = store.trunc_normal(format!("{name}.w"), vec![in_dim, out_dim], 0.02);
        let b = Some(store.zeros(format!("{name}.b"), vec![out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn no_bias(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let w = store.trunc_normal(format!("{name}.w"), vec![in_dim, out_dim], 0.02);
        Linear { w, b: None, in_dim, out_dim }
    }

    /// Same as [`Linear::new`] with an explicit weight std, for layers whose
    /// contribution must be visible at init (e.g. additive skip fusion).
    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f32,
    ) -> Linear {
        let w = store.trunc_normal(format!("{name}.w"), vec![in_dim, out_dim], std);
        let b = Some(store.zeros(format!("{name}.b"), vec![out_dim]));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::V>,
        x: &G::V,
    ) -> crate::numerics::Result<G::V> {
        let y = g.matmul(x, bound.get(self.w))?;
        match self.b {
            Some(b) => g.add_bias(&y, bound.get(b)),
            None => Ok(y),
        }
    }
}

/// Last-axis layer norm with learned gain/offset.
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: store.ones(format!("{name}.g"), vec![dim]),
            beta: store.zeros(format!("{name}.b"), vec![dim]),
        }
    }

    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::V>,
        x: &G::V,
    ) -> crate::numerics::Result<G::V> {
        g.layer_norm(x, bound.get(self.gamma), bound.get(self.beta))
    }
}

//! Global multi-head self-attention and the pre-norm transformer layer built
//! on it: t ← t + MHA(LN(t)); t ← t + MLP(LN(t)).

use std::rc::Rc;

use crate::numerics::{Graph, IndexMap, Result};

use super::param::{Bound, LayerNorm, Linear, ParamStore};

/// [B, N, K] → [B, heads, N, K/heads], per sample.
fn head_split_map(n: usize, dim: usize, heads: usize) -> IndexMap {
    let dk = dim / heads;
    let mut idx = Vec::with_capacity(n * dim);
    for h in 0..heads {
        for t in 0..n {
            for d in 0..dk {
                idx.push(t * dim + h * dk + d);
            }
        }
    }
    IndexMap::new(idx, vec![heads, n, dk], n * dim)
}

/// Inverse of [`head_split_map`]: [B, heads, N, K/heads] → [B, N, K].
fn head_merge_map(n: usize, dim: usize, heads: usize) -> IndexMap {
    let fwd = head_split_map(n, dim, heads);
    let mut inv = vec![0usize; n * dim];
    for (dst, &src) in fwd.indices.iter().enumerate() {
        inv[src] = dst;
    }
    IndexMap::new(inv, vec![n, dim], n * dim)
}

pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    split: Rc<IndexMap>,
    merge: Rc<IndexMap>,
    heads: usize,
    dk: usize,
    n: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        dim: usize,
        heads: usize,
        out_std: f32,
    ) -> MultiHeadAttention {
        assert!(heads > 0 && dim % heads == 0, "heads {heads} must divide dim {dim}");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, &format!("{name}.v"), dim, dim),
            o: Linear::with_std(store, &format!("{name}.o"), dim, dim, out_std),
            split: Rc::new(head_split_map(n, dim, heads)),
            merge: Rc::new(head_merge_map(n, dim, heads)),
            heads,
            dk: dim / heads,
            n,
        }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, t: &G::V) -> Result<G::V> {
        let batch = g.shape(t)[0];
        let fold = |g: &mut G, x: &G::V| -> Result<G::V> {
            // [B, N, K] → [B, heads, N, dk] → [B·heads, N, dk]
            let h = g.gather(x, &self.split)?;
            g.reshape(&h, vec![batch * self.heads, self.n, self.dk])
        };

        let q = self.q.forward(g, bound, t)?;
        let k = self.k.forward(g, bound, t)?;
        let v = self.v.forward(g, bound, t)?;
        let (qh, kh, vh) = (fold(g, &q)?, fold(g, &k)?, fold(g, &v)?);

        let scores = g.bmm(&qh, &kh, true)?;
        let scores = g.scale(&scores, 1.0 / (self.dk as f32).sqrt())?;
        let probs = g.softmax_last(&scores)?;
        let ctx = g.bmm(&probs, &vh, false)?;

        let ctx = g.reshape(&ctx, vec![batch, self.heads, self.n, self.dk])?;
        let merged = g.gather(&ctx, &self.merge)?;
        self.o.forward(g, bound, &merged)
    }
}

pub struct TransformerLayer {
    ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp1: Linear,
    mlp2: Linear,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n: usize,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> TransformerLayer {
        TransformerLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), n, dim, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            mlp1: Linear::new(store, &format!("{name}.mlp1"), dim, dim * mlp_ratio),
            mlp2: Linear::new(store, &format!("{name}.mlp2"), dim * mlp_ratio, dim),
        }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, t: &G::V) -> Result<G::V> {
        let normed = self.ln1.forward(g, bound, t)?;
        let attended = self.attn.forward(g, bound, &normed)?;
        let t = g.add(t, &attended)?;

        let normed = self.ln2.forward(g, bound, &t)?;
        let hidden = self.mlp1.forward(g, bound, &normed)?;
        let hidden = g.gelu(&hidden)?;
        let expanded = self.mlp2.forward(g, bound, &hidden)?;
        g.add(&t, &expanded)
    }
}

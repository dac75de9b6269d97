//! Patch embedding and its inverse: images [B, H, W, C] to token sequences
//! [B, N, K] and back. Patches tile the image in row-major grid order; token
//! t = (gy·cols + gx) holds patch (gy, gx) flattened as (py, px, c).

use std::rc::Rc;

use crate::numerics::{Graph, IndexMap, Result};

use super::param::{Bound, Linear, ParamId, ParamStore};

/// Token-grid metadata carried alongside a [B, N, K] value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
}

impl TokenGrid {
    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }
}

/// Routing table that turns [B, H, W, C] into [B, N, p·p·C].
pub fn patchify_map(h: usize, w: usize, c: usize, p: usize) -> IndexMap {
    assert!(p > 0 && h % p == 0 && w % p == 0, "patch {p} must tile {h}x{w}");
    let (rows, cols) = (h / p, w / p);
    let mut idx = Vec::with_capacity(h * w * c);
    for gy in 0..rows {
        for gx in 0..cols {
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        idx.push(((gy * p + py) * w + (gx * p + px)) * c + ch);
                    }
                }
            }
        }
    }
    IndexMap::new(idx, vec![rows * cols, p * p * c], h * w * c)
}

/// Exact inverse of [`patchify_map`]: [B, N, p·p·C] back to [B, H, W, C].
pub fn unpatchify_map(h: usize, w: usize, c: usize, p: usize) -> IndexMap {
    let fwd = patchify_map(h, w, c, p);
    let mut inv = vec![0usize; fwd.indices.len()];
    for (dst, &src) in fwd.indices.iter().enumerate() {
        inv[src] = dst;
    }
    IndexMap::new(inv, vec![h, w, c], h * w * c)
}

/// Patch extraction, linear projection to the model dim, and a learned
/// per-token positional embedding added on top.
pub struct PatchEmbed {
    map: Rc<IndexMap>,
    proj: Linear,
    pos: ParamId,
    pub grid: TokenGrid,
}

impl PatchEmbed {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        h: usize,
        w: usize,
        c: usize,
        patch: usize,
        dim: usize,
    ) -> PatchEmbed {
        let map = Rc::new(patchify_map(h, w, c, patch));
        let grid = TokenGrid { rows: h / patch, cols: w / patch, dim };
        let proj = Linear::new(store, &format!("{name}.proj"), patch * patch * c, dim);
        let pos = store.trunc_normal(format!("{name}.pos"), vec![grid.tokens(), dim], 0.02);
        PatchEmbed { map, proj, pos, grid }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, x: &G::V) -> Result<G::V> {
        let patches = g.gather(x, &self.map)?;
        let t = self.proj.forward(g, bound, &patches)?;
        g.add_bias(&t, bound.get(self.pos))
    }
}

/// Projection from the model dim back to pixel patches, then scatter into
/// image layout.
pub struct PatchUnembed {
    map: Rc<IndexMap>,
    proj: Linear,
}

impl PatchUnembed {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        h: usize,
        w: usize,
        c: usize,
        patch: usize,
        dim: usize,
    ) -> PatchUnembed {
        let map = Rc::new(unpatchify_map(h, w, c, patch));
        let proj = Linear::new(store, &format!("{name}.proj"), dim, patch * patch * c);
        PatchUnembed { map, proj }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, t: &G::V) -> Result<G::V> {
        let patches = self.proj.forward(g, bound, t)?;
        g.gather(&patches, &self.map)
    }

    /// Bias of the pixel projection — the model head owns its init.
    pub fn out_bias(&self) -> ParamId {
        self.proj.b.expect("unembed projection carries a bias")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Eager, Rng, Tensor};

    fn ident(rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(vec![rows, cols], |i| {
            if i / cols == i % cols { 1.0 } else { 0.0 }
        })
    }

    #[test]
    fn patchify_then_unpatchify_is_identity_permutation() {
        let fwd = patchify_map(8, 12, 2, 4);
        let inv = unpatchify_map(8, 12, 2, 4);
        for dst in 0..fwd.indices.len() {
            assert_eq!(inv.indices[fwd.indices[dst]], dst);
        }
    }

    #[test]
    fn embed_shapes_and_grid() {
        let mut store = ParamStore::new(4);
        let emb = PatchEmbed::new(&mut store, "embed", 8, 8, 1, 4, 10);
        assert_eq!(emb.grid, TokenGrid { rows: 2, cols: 2, dim: 10 });

        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let mut rng = Rng::new(1);
        let x = Tensor::from_fn(vec![3, 8, 8, 1], |_| rng.uniform());
        let t = emb.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(t.shape(), [3, 4, 10]);
    }

    #[test]
    fn identity_weights_round_trip_exactly() {
        // Projection dim equals the patch volume and both projections are the
        // identity, so unembed(embed(x)) must reproduce x bit for bit.
        let (h, w, p) = (6, 4, 2);
        let mut store = ParamStore::new(7);
        let emb = PatchEmbed::new(&mut store, "e", h, w, 1, p, p * p);
        let une = PatchUnembed::new(&mut store, "u", h, w, 1, p, p * p);
        *store.tensor_mut(emb.proj.w) = ident(4, 4);
        *store.tensor_mut(une.proj.w) = ident(4, 4);
        *store.tensor_mut(emb.pos) = Tensor::zeros(vec![6, 4]);

        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let mut rng = Rng::new(2);
        let x = Tensor::from_fn(vec![2, h, w, 1], |_| rng.uniform_in(-1.0, 1.0));
        let t = emb.forward(&mut g, &bound, &x).unwrap();
        let back = une.forward(&mut g, &bound, &t).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn embedding_is_affine_in_the_input() {
        // With the bias and positional table zeroed the map is linear:
        // embed(a·x + b·y) = a·embed(x) + b·embed(y).
        let mut store = ParamStore::new(3);
        let emb = PatchEmbed::new(&mut store, "e", 8, 8, 1, 4, 6);
        *store.tensor_mut(emb.proj.b.unwrap()) = Tensor::zeros(vec![6]);
        *store.tensor_mut(emb.pos) = Tensor::zeros(vec![4, 6]);

        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let mut rng = Rng::new(5);
        let x = Tensor::from_fn(vec![1, 8, 8, 1], |_| rng.uniform_in(-1.0, 1.0));
        let y = Tensor::from_fn(vec![1, 8, 8, 1], |_| rng.uniform_in(-1.0, 1.0));
        let mix = Tensor::from_fn(vec![1, 8, 8, 1], |i| 2.0 * x.data()[i] - 0.5 * y.data()[i]);

        let tx = emb.forward(&mut g, &bound, &x).unwrap();
        let ty = emb.forward(&mut g, &bound, &y).unwrap();
        let tm = emb.forward(&mut g, &bound, &mix).unwrap();
        for i in 0..tm.numel() {
            let want = 2.0 * tx.data()[i] - 0.5 * ty.data()[i];
            assert!((tm.data()[i] - want).abs() < 1e-5);
        }
    }

    #[test]
    fn full_scale_grid_dimensions() {
        let map = patchify_map(256, 256, 1, 16);
        assert_eq!(map.out_shape, [256, 256]);
        assert_eq!(map.in_numel, 65_536);
    }
}

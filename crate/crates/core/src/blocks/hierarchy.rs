//! Token-grid rescaling for the hierarchical architectures. Merging halves
//! each grid side by concatenating every 2×2 token neighborhood — child order
//! (0,0), (0,1), (1,0), (1,1) — and reducing 4K → 2K with a linear map.
//! Expanding is the mirror image: K → 2K linearly, then each token's vector
//! splits into four children of dim K/2 laid out in the same child order.

use std::rc::Rc;

use crate::numerics::{Graph, IndexMap, Result};

use super::embed::TokenGrid;
use super::param::{Bound, Linear, ParamStore};

const CHILD_ORDER: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// [B, N, K] on (r, c) → [B, N/4, 4K]: concatenated 2×2 neighborhoods.
fn merge_map(grid: TokenGrid) -> IndexMap {
    let (r, c, k) = (grid.rows, grid.cols, grid.dim);
    assert!(r % 2 == 0 && c % 2 == 0, "merging needs an even grid, got {r}x{c}");
    let mut idx = Vec::with_capacity(r * c * k);
    for gy in 0..r / 2 {
        for gx in 0..c / 2 {
            for (dy, dx) in CHILD_ORDER {
                let src = (2 * gy + dy) * c + (2 * gx + dx);
                idx.extend((0..k).map(|d| src * k + d));
            }
        }
    }
    IndexMap::new(idx, vec![r * c / 4, 4 * k], r * c * k)
}

/// [B, M, 2K] on (r, c) → [B, 4M, K/2·2] split into children on (2r, 2c).
fn expand_map(grid: TokenGrid) -> IndexMap {
    let (r, c, k) = (grid.rows, grid.cols, grid.dim);
    let wide = 2 * k; // vector width after the K → 2K projection
    let half = k / 2; // child dim
    assert!(k % 2 == 0, "expanding needs an even dim, got {k}");
    let mut idx = Vec::with_capacity(r * c * wide);
    for gy in 0..2 * r {
        for gx in 0..2 * c {
            let parent = (gy / 2) * c + gx / 2;
            let child = CHILD_ORDER
                .iter()
                .position(|&(dy, dx)| (dy, dx) == (gy % 2, gx % 2))
                .unwrap();
            idx.extend((0..half).map(|d| parent * wide + child * half + d));
        }
    }
    IndexMap::new(idx, vec![4 * r * c, half], r * c * wide)
}

pub struct PatchMerging {
    map: Rc<IndexMap>,
    pub reduce: Linear,
    pub out_grid: TokenGrid,
}

impl PatchMerging {
    pub fn new(store: &mut ParamStore, name: &str, grid: TokenGrid) -> PatchMerging {
        let map = Rc::new(merge_map(grid));
        let reduce = Linear::new(store, &format!("{name}.red"), 4 * grid.dim, 2 * grid.dim);
        let out_grid = TokenGrid { rows: grid.rows / 2, cols: grid.cols / 2, dim: 2 * grid.dim };
        PatchMerging { map, reduce, out_grid }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, t: &G::V) -> Result<G::V> {
        let grouped = g.gather(t, &self.map)?;
        self.reduce.forward(g, bound, &grouped)
    }
}

pub struct PatchExpanding {
    map: Rc<IndexMap>,
    pub widen: Linear,
    pub out_grid: TokenGrid,
}

impl PatchExpanding {
    pub fn new(store: &mut ParamStore, name: &str, grid: TokenGrid) -> PatchExpanding {
        let map = Rc::new(expand_map(grid));
        let widen = Linear::new(store, &format!("{name}.exp"), grid.dim, 2 * grid.dim);
        let out_grid = TokenGrid { rows: grid.rows * 2, cols: grid.cols * 2, dim: grid.dim / 2 };
        PatchExpanding { map, widen, out_grid }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, t: &G::V) -> Result<G::V> {
        let wide = self.widen.forward(g, bound, t)?;
        g.gather(&wide, &self.map)
    }
}

//! Model assembly: one constructor wires any of the seven architectures out
//! of the shared blocks, entirely from a [`ModelConfig`]. Parameter names are
//! structural ("layer3.attn.q.w"), not architecture-specific, so two models
//! that share a sub-stack initialize those weights identically from the same
//! seed — h_tae_s with its fusion weights zeroed is bit-for-bit h_tae.

use crate::blocks::{
    mirror_schedule, Bound, ConvDecoder, ConvEncoder, DenseBottleneck, LayerNorm, Linear,
    ParamStore, PatchEmbed, PatchExpanding, PatchMerging, PatchUnembed, TokenGrid,
    TransformerLayer,
};
use crate::numerics::{Eager, Graph, NumericsError, Result as NumResult, Tensor};

use super::config::{Architecture, ModelConfig};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Conv middle of the flat transformer autoencoders: dense (dc_tae) or fully
/// spatial (sc_tae), both operating on the token grid as an image.
enum Mid {
    Dense { enc: ConvEncoder, bott: DenseBottleneck, dec: ConvDecoder },
    Spatial { enc: ConvEncoder, dec: ConvDecoder },
}

enum Net {
    /// b_tae / dc_tae / sc_tae: embed → L/2 layers → [mid] → L/2 layers →
    /// final norm → unembed.
    Flat {
        embed: PatchEmbed,
        pre: Vec<TransformerLayer>,
        mid: Option<Mid>,
        post: Vec<TransformerLayer>,
        head_ln: LayerNorm,
        unembed: PatchUnembed,
    },
    /// h_tae / h_tae_s: one merge level; fusion is the h_tae_s skip.
    Hier {
        embed: PatchEmbed,
        down: Vec<TransformerLayer>,
        merge: PatchMerging,
        bottom: Vec<TransformerLayer>,
        expand: PatchExpanding,
        fuse: Option<Linear>,
        up: Vec<TransformerLayer>,
        head_ln: LayerNorm,
        unembed: PatchUnembed,
    },
    /// ae_dense / ae_spatial image-space baselines.
    Conv {
        enc: ConvEncoder,
        bott: Option<DenseBottleneck>,
        dec: ConvDecoder,
    },
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut store = ParamStore::new(seed);
        let net = build(&config, &mut store);
        Ok(Model { config, store, net })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn bind<G: Graph>(&self, g: &mut G, trainable: bool) -> NumResult<Bound<G::V>> {
        self.store.bind(g, trainable)
    }

    pub fn forward_on<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::V>,
        x: &G::V,
    ) -> NumResult<G::V> {
        Ok(self.forward_traced(g, bound, x)?.0)
    }

    /// One-off eager reconstruction of a [B, H, W, C] batch.
    pub fn infer(&self, x: &Tensor) -> NumResult<Tensor> {
        let mut g = Eager;
        let bound = self.bind(&mut g, false)?;
        self.forward_on(&mut g, &bound, x)
    }

    /// Forward pass that also reports the observed per-sample bottleneck
    /// shape (batch axis stripped): the merged token sequence for the
    /// hierarchical models, the latent z for the dense ones, the spatial
    /// code for sc_tae/ae_spatial, and the mid token sequence for b_tae.
    pub fn forward_traced<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::V>,
        x: &G::V,
    ) -> NumResult<(G::V, Vec<usize>)> {
        let s = g.shape(x);
        let want = [self.config.image, self.config.image, self.config.in_ch];
        if s.len() != 4 || s[1..] != want {
            return Err(NumericsError::invalid(
                "model",
                format!("expected input [B, {}, {}, {}], got {s:?}", want[0], want[1], want[2]),
            ));
        }
        let batch = s[0];
        let per_sample = |g: &G, v: &G::V| g.shape(v)[1..].to_vec();

        match &self.net {
            Net::Flat { embed, pre, mid, post, head_ln, unembed } => {
                let mut t = embed.forward(g, bound, x)?;
                for layer in pre {
                    t = layer.forward(g, bound, &t)?;
                }
                let grid = embed.grid;
                let (mut t, bneck) = match mid {
                    None => {
                        let bneck = per_sample(g, &t);
                        (t, bneck)
                    }
                    Some(Mid::Dense { enc, bott, dec }) => {
                        let img = g.reshape(&t, vec![batch, grid.rows, grid.cols, grid.dim])?;
                        let e = enc.forward(g, bound, &img)?;
                        let (z, restored) = bott.forward(g, bound, &e)?;
                        let bneck = per_sample(g, &z);
                        let d = dec.forward(g, bound, &restored)?;
                        let t = g.reshape(&d, vec![batch, grid.tokens(), grid.dim])?;
                        (t, bneck)
                    }
                    Some(Mid::Spatial { enc, dec }) => {
                        let img = g.reshape(&t, vec![batch, grid.rows, grid.cols, grid.dim])?;
                        let e = enc.forward(g, bound, &img)?;
                        let bneck = per_sample(g, &e);
                        let d = dec.forward(g, bound, &e)?;
                        let t = g.reshape(&d, vec![batch, grid.tokens(), grid.dim])?;
                        (t, bneck)
                    }
                };
                for layer in post {
                    t = layer.forward(g, bound, &t)?;
                }
                let t = head_ln.forward(g, bound, &t)?;
                let y = unembed.forward(g, bound, &t)?;
                Ok((g.sigmoid(&y)?, bneck))
            }
            Net::Hier { embed, down, merge, bottom, expand, fuse, up, head_ln, unembed } => {
                let mut t = embed.forward(g, bound, x)?;
                for layer in down {
                    t = layer.forward(g, bound, &t)?;
                }
                let skip = t.clone();
                let mut m = merge.forward(g, bound, &t)?;
                let bneck = per_sample(g, &m);
                for layer in bottom {
                    m = layer.forward(g, bound, &m)?;
                }
                let mut t = expand.forward(g, bound, &m)?;
                if let Some(fusion) = fuse {
                    let cat = g.concat_last(&t, &skip)?;
                    let f = fusion.forward(g, bound, &cat)?;
                    t = g.add(&t, &f)?;
                }
                for layer in up {
                    t = layer.forward(g, bound, &t)?;
                }
                let t = head_ln.forward(g, bound, &t)?;
                let y = unembed.forward(g, bound, &t)?;
                Ok((g.sigmoid(&y)?, bneck))
            }
            Net::Conv { enc, bott, dec } => {
                let e = enc.forward(g, bound, x)?;
                let (code, bneck) = match bott {
                    Some(bott) => {
                        let (z, restored) = bott.forward(g, bound, &e)?;
                        let bneck = per_sample(g, &z);
                        (restored, bneck)
                    }
                    None => {
                        let bneck = per_sample(g, &e);
                        (e, bneck)
                    }
                };
                let y = dec.forward(g, bound, &code)?;
                Ok((g.sigmoid(&y)?, bneck))
            }
        }
    }
}

/// The reconstruction head feeds a sigmoid while brain slices are mostly
/// dark (background exactly 0, tissue ≈ 0.1–0.6), so the head bias starts at
/// σ⁻¹(≈0.12) instead of 0 — otherwise MAE training spends its first
/// epochs dragging a 0.5-grey canvas down to the data brightness.
const HEAD_BIAS: f32 = -2.0;

fn prime_head_bias(store: &mut ParamStore, id: crate::blocks::ParamId) {
    let shape = store.tensor(id).shape().to_vec();
    *store.tensor_mut(id) = Tensor::filled(shape, HEAD_BIAS);
}

fn transformer_stack(
    store: &mut ParamStore,
    prefix: &str,
    count: usize,
    start: usize,
    n: usize,
    dim: usize,
    heads: usize,
) -> Vec<TransformerLayer> {
    (start..start + count)
        .map(|i| TransformerLayer::new(store, &format!("{prefix}{i}"), n, dim, heads, 4))
        .collect()
}

fn build(config: &ModelConfig, store: &mut ParamStore) -> Net {
    let image = config.image;
    let in_ch = config.in_ch;
    match config.arch {
        Architecture::BTae | Architecture::DcTae | Architecture::ScTae => {
            let grid_side = image / config.patch;
            let n = grid_side * grid_side;
            let k = config.embed;
            let embed = PatchEmbed::new(store, "embed", image, image, in_ch, config.patch, k);
            let pre = transformer_stack(store, "layer", config.layers / 2, 0, n, k, config.heads);
            let mid = match config.arch {
                Architecture::BTae => None,
                Architecture::DcTae => {
                    let enc = ConvEncoder::new(store, "mid.enc", k, &config.conv);
                    let side = config.conv.iter().fold(grid_side, |s, &(_, st)| s / st);
                    let bott = DenseBottleneck::new(
                        store, "mid.dense", side, side, enc.out_ch, config.z_dim,
                    );
                    let dec =
                        ConvDecoder::new(store, "mid.dec", enc.out_ch, &mirror_schedule(&config.conv, k));
                    Some(Mid::Dense { enc, bott, dec })
                }
                _ => {
                    let enc = ConvEncoder::new(store, "mid.enc", k, &config.conv);
                    let dec =
                        ConvDecoder::new(store, "mid.dec", enc.out_ch, &mirror_schedule(&config.conv, k));
                    Some(Mid::Spatial { enc, dec })
                }
            };
            let post = transformer_stack(
                store,
                "layer",
                config.layers / 2,
                config.layers / 2,
                n,
                k,
                config.heads,
            );
            // Final norm before the head, the ViT convention: the residual
            // stream grows with depth and an unnormalized head trains poorly.
            let head_ln = LayerNorm::new(store, "head.ln", k);
            let unembed =
                PatchUnembed::new(store, "unembed", image, image, in_ch, config.patch, k);
            prime_head_bias(store, unembed.out_bias());
            Net::Flat { embed, pre, mid, post, head_ln, unembed }
        }
        Architecture::HTae | Architecture::HTaeS => {
            let grid_side = image / config.patch;
            let n = grid_side * grid_side;
            let k = config.embed;
            let outer = config.layers / 4;
            let inner = config.layers / 2;
            let embed = PatchEmbed::new(store, "embed", image, image, in_ch, config.patch, k);
            let down = transformer_stack(store, "down", outer, 0, n, k, config.heads);
            let merge =
                PatchMerging::new(store, "merge", TokenGrid { rows: grid_side, cols: grid_side, dim: k });
            let bottom =
                transformer_stack(store, "bottom", inner, 0, n / 4, 2 * k, config.heads);
            let expand = PatchExpanding::new(store, "expand", merge.out_grid);
            // Xavier scale keeps the additive skip path visibly live from the
            // first forward; the ViT default (0.02) leaves the fused output
            // almost indistinguishable from the skip-free variant.
            let fuse_std = (2.0 / (3 * k) as f32).sqrt();
            let fuse = (config.arch == Architecture::HTaeS)
                .then(|| Linear::with_std(store, "skip", 2 * k, k, fuse_std));
            let up = transformer_stack(store, "up", outer, 0, n, k, config.heads);
            let head_ln = LayerNorm::new(store, "head.ln", k);
            let unembed =
                PatchUnembed::new(store, "unembed", image, image, in_ch, config.patch, k);
            prime_head_bias(store, unembed.out_bias());
            Net::Hier { embed, down, merge, bottom, expand, fuse, up, head_ln, unembed }
        }
        Architecture::AeDense | Architecture::AeSpatial => {
            let enc = ConvEncoder::new(store, "enc", in_ch, &config.conv);
            let side = config.conv.iter().fold(image, |s, &(_, st)| s / st);
            let bott = (config.z_dim > 0).then(|| {
                DenseBottleneck::new(store, "bottleneck", side, side, enc.out_ch, config.z_dim)
            });
            let dec =
                ConvDecoder::new(store, "dec", enc.out_ch, &mirror_schedule(&config.conv, in_ch));
            prime_head_bias(store, dec.out_bias());
            Net::Conv { enc, bott, dec }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Preset;
    use crate::numerics::{Rng, Tape};

    fn image(config: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(vec![1, config.image, config.image, config.in_ch], |_| rng.uniform())
    }

    #[test]
    fn desk_bottlenecks_and_output_shapes() {
        let want: [(Architecture, &[usize]); 7] = [
            (Architecture::BTae, &[64, 24]),
            (Architecture::DcTae, &[128]),
            (Architecture::ScTae, &[8, 8, 4]),
            (Architecture::HTae, &[64, 192]),
            (Architecture::HTaeS, &[64, 192]),
            (Architecture::AeDense, &[128]),
            (Architecture::AeSpatial, &[4, 4, 4]),
        ];
        for (arch, bneck) in want {
            let model = Model::new(ModelConfig::preset(arch, Preset::Desk), 1).unwrap();
            let x = image(&model.config, 2);
            let mut g = Eager;
            let bound = model.bind(&mut g, false).unwrap();
            let (y, got) = model.forward_traced(&mut g, &bound, &x).unwrap();
            assert_eq!(got, bneck, "{arch} bottleneck");
            assert_eq!(y.shape(), x.shape(), "{arch} output shape");
            assert!(
                y.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                "{arch} output escapes the sigmoid range"
            );
        }
    }

    #[test]
    fn same_seed_same_output() {
        let config = ModelConfig::preset(Architecture::DcTae, Preset::Desk);
        let a = Model::new(config.clone(), 9).unwrap();
        let b = Model::new(config, 9).unwrap();
        let x = image(&a.config, 3);
        let ya = a.infer(&x).unwrap();
        let yb = b.infer(&x).unwrap();
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn different_seeds_differ() {
        let config = ModelConfig::preset(Architecture::BTae, Preset::Desk);
        let a = Model::new(config.clone(), 1).unwrap();
        let b = Model::new(config, 2).unwrap();
        let x = image(&a.config, 4);
        assert_ne!(a.infer(&x).unwrap().data(), b.infer(&x).unwrap().data());
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn ae_dense_desk_parameter_count_by_hand() {
        // enc: 5·5·1·8+8, 5·5·8·16+16, 5·5·16·32+32, 5·5·32·32+32 = 41 888
        // bottleneck: 512·128+128 + 128·512+512 = 131 712
        // dec: 5·5·32·32+32, 5·5·16·32+16, 5·5·8·16+8, 5·5·1·8+1 = 41 857
        let model =
            Model::new(ModelConfig::preset(Architecture::AeDense, Preset::Desk), 1).unwrap();
        assert_eq!(model.param_count(), 215_457);
    }

    #[test]
    fn shared_names_share_initialization_across_h_variants() {
        let h = Model::new(ModelConfig::preset(Architecture::HTae, Preset::Desk), 7).unwrap();
        let hs = Model::new(ModelConfig::preset(Architecture::HTaeS, Preset::Desk), 7).unwrap();
        assert_eq!(hs.store.len(), h.store.len() + 2); // + skip.w, skip.b
        for (name, t) in h.store.iter() {
            let id = hs.store.find(name).unwrap_or_else(|| panic!("{name} missing"));
            assert_eq!(hs.store.tensor(id).data(), t.data(), "{name} differs");
        }
    }

    #[test]
    fn zeroed_fusion_reduces_h_tae_s_to_h_tae() {
        let h = Model::new(ModelConfig::preset(Architecture::HTae, Preset::Desk), 7).unwrap();
        let mut hs =
            Model::new(ModelConfig::preset(Architecture::HTaeS, Preset::Desk), 7).unwrap();
        let x = image(&h.config, 5);

        // Default (random) fusion must visibly change the output...
        let split = hs.infer(&x).unwrap();
        let plain = h.infer(&x).unwrap();
        let max_diff = split.max_abs_diff(&plain);
        assert!(max_diff > 1e-3, "fusion appears dead: max diff {max_diff}");

        // ...and a zeroed fusion must erase the difference entirely.
        let wid = hs.store.find("skip.w").unwrap();
        let shape = hs.store.tensor(wid).shape().to_vec();
        *hs.store.tensor_mut(wid) = Tensor::zeros(shape);
        let zeroed = hs.infer(&x).unwrap();
        assert_eq!(zeroed.data(), plain.data());
    }

    #[test]
    fn every_parameter_reaches_the_loss() {
        for arch in Architecture::ALL {
            let model = Model::new(ModelConfig::preset(arch, Preset::Desk), 3).unwrap();
            let x = image(&model.config, 6);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true).unwrap();
            let xv = tape.constant(x).unwrap();
            let y = model.forward_on(&mut tape, &bound, &xv).unwrap();
            let sq = tape.mul(&y, &y).unwrap();
            let loss = tape.mean_all(&sq).unwrap();
            let grads = tape.backward(loss).unwrap();
            for (id, (name, _)) in model.store.ids().zip(model.store.iter()) {
                let g = grads
                    .get(*bound.get(id))
                    .unwrap_or_else(|| panic!("{arch}: {name} missing from gradients"));
                assert!(
                    g.iter().any(|&v| v != 0.0),
                    "{arch}: parameter {name} got an all-zero gradient"
                );
            }
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let model = Model::new(ModelConfig::preset(Architecture::BTae, Preset::Desk), 1).unwrap();
        let x = Tensor::zeros(vec![1, 32, 32, 1]);
        assert!(model.infer(&x).is_err());
    }
}

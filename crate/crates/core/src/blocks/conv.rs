//! Strided convolution stacks and the dense bottleneck. All stages use 5×5
//! kernels with same-padding; LeakyReLU(0.2) follows every stage except the
//! last decoder stage, whose activation belongs to the model head.

use crate::numerics::{Graph, Padding, Result};

use super::param::{Bound, Linear, ParamId, ParamStore};

pub const CONV_KERNEL: usize = 5;
pub const CONV_SLOPE: f32 = 0.2;

struct ConvStage {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

/// Downsampling stack: each `(channels, stride)` entry is one conv stage.
pub struct ConvEncoder {
    stages: Vec<ConvStage>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        schedule: &[(usize, usize)],
    ) -> ConvEncoder {
        let mut stages = Vec::with_capacity(schedule.len());
        let mut cin = in_ch;
        for (i, &(cout, stride)) in schedule.iter().enumerate() {
            let k = CONV_KERNEL;
            let w = store.he_uniform(
                format!("{name}.{i}.w"),
                vec![k, k, cin, cout],
                k * k * cin,
            );
            let b = store.zeros(format!("{name}.{i}.b"), vec![cout]);
            stages.push(ConvStage { w, b, stride });
            cin = cout;
        }
        ConvEncoder { stages, in_ch, out_ch: cin }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, x: &G::V) -> Result<G::V> {
        let mut x = x.clone();
        for stage in &self.stages {
            let y = g.conv2d(&x, bound.get(stage.w), stage.stride, Padding::Same)?;
            let y = g.add_bias(&y, bound.get(stage.b))?;
            x = g.leaky_relu(&y, CONV_SLOPE)?;
        }
        Ok(x)
    }
}

/// Upsampling stack of transpose convs; the final stage is left unactivated.
pub struct ConvDecoder {
    stages: Vec<ConvStage>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvDecoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        schedule: &[(usize, usize)],
    ) -> ConvDecoder {
        let mut stages = Vec::with_capacity(schedule.len());
        let mut cin = in_ch;
        for (i, &(cout, stride)) in schedule.iter().enumerate() {
            let k = CONV_KERNEL;
            let w = store.he_uniform(
                format!("{name}.{i}.w"),
                vec![k, k, cout, cin],
                k * k * cin,
            );
            let b = store.zeros(format!("{name}.{i}.b"), vec![cout]);
            stages.push(ConvStage { w, b, stride });
            cin = cout;
        }
        ConvDecoder { stages, in_ch, out_ch: cin }
    }

    pub fn forward<G: Graph>(&self, g: &mut G, bound: &Bound<G::V>, x: &G::V) -> Result<G::V> {
        let mut x = x.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            let y = g.conv2d_transpose(&x, bound.get(stage.w), stage.stride)?;
            let y = g.add_bias(&y, bound.get(stage.b))?;
            x = if i + 1 < self.stages.len() { g.leaky_relu(&y, CONV_SLOPE)? } else { y };
        }
        Ok(x)
    }

    /// Bias of the unactivated last stage — the model head owns its init.
    pub fn out_bias(&self) -> ParamId {
        self.stages.last().expect("decoder has at least one stage").b
    }
}

/// Mirror schedule for a decoder that inverts `enc` back to `out_ch`
/// channels: channel counts reversed and shifted by one stage, strides
/// reversed.
pub fn mirror_schedule(enc: &[(usize, usize)], out_ch: usize) -> Vec<(usize, usize)> {
    let mut dec = Vec::with_capacity(enc.len());
    for i in (0..enc.len()).rev() {
        let cout = if i == 0 { out_ch } else { enc[i - 1].0 };
        dec.push((cout, enc[i].1));
    }
    dec
}

/// Flatten → z → restore: the global bottleneck of the dense autoencoders.
pub struct DenseBottleneck {
    narrow: Linear,
    restore: Linear,
    h: usize,
    w: usize,
    c: usize,
    pub z_dim: usize,
}

impl DenseBottleneck {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        h: usize,
        w: usize,
        c: usize,
        z_dim: usize,
    ) -> DenseBottleneck {
        let flat = h * w * c;
        DenseBottleneck {
            narrow: Linear::new(store, &format!("{name}.in"), flat, z_dim),
            restore: Linear::new(store, &format!("{name}.out"), z_dim, flat),
            h,
            w,
            c,
            z_dim,
        }
    }

    /// Returns (latent [B, z], restored [B, h, w, c]).
    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        bound: &Bound<G::V>,
        x: &G::V,
    ) -> Result<(G::V, G::V)> {
        let batch = g.shape(x)[0];
        let flat = g.reshape(x, vec![batch, self.h * self.w * self.c])?;
        let z = self.narrow.forward(g, bound, &flat)?;
        let wide = self.restore.forward(g, bound, &z)?;
        let restored = g.reshape(&wide, vec![batch, self.h, self.w, self.c])?;
        Ok((z, restored))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Eager, Rng, Tensor};

    fn rand(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform())
    }

    #[test]
    fn four_stride_two_stages_map_256_to_16() {
        let mut store = ParamStore::new(1);
        let enc = ConvEncoder::new(&mut store, "e", 1, &[(2, 2), (2, 2), (2, 2), (2, 2)]);
        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![1, 256, 256, 1], 2);
        let y = enc.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(y.shape(), [1, 16, 16, 2]);
    }

    #[test]
    fn empty_schedule_is_identity() {
        let mut store = ParamStore::new(3);
        let enc = ConvEncoder::new(&mut store, "e", 4, &[]);
        assert_eq!(enc.out_ch, 4);
        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![2, 5, 5, 4], 4);
        let y = enc.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn center_tap_kernel_pins_same_alignment_and_leaky_slope() {
        // One stage, stride 2, kernel with a single -1 at the center tap:
        // same-padding for 4→2 puts pad_beg at 1, so out(oy, ox) =
        // leaky(-in(2oy+1, 2ox+1)) = -0.2·in(2oy+1, 2ox+1) for positive in.
        let mut store = ParamStore::new(5);
        let enc = ConvEncoder::new(&mut store, "e", 1, &[(1, 2)]);
        let mut w = vec![0.0; 25];
        w[2 * 5 + 2] = -1.0;
        *store.tensor_mut(enc.stages[0].w) = Tensor::new(vec![5, 5, 1, 1], w).unwrap();

        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![1, 4, 4, 1], 6);
        let y = enc.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 1]);
        for oy in 0..2 {
            for ox in 0..2 {
                let want = -0.2 * x.data()[(2 * oy + 1) * 4 + 2 * ox + 1];
                let got = y.data()[oy * 2 + ox];
                assert!((got - want).abs() < 1e-6, "({oy},{ox}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn decoder_mirrors_encoder_shapes() {
        let schedule = [(8, 2), (16, 2)];
        let mut store = ParamStore::new(7);
        let enc = ConvEncoder::new(&mut store, "e", 1, &schedule);
        let dec_schedule = mirror_schedule(&schedule, 1);
        assert_eq!(dec_schedule, [(8, 2), (1, 2)]);
        let dec = ConvDecoder::new(&mut store, "d", enc.out_ch, &dec_schedule);

        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![2, 32, 32, 1], 8);
        let mid = enc.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(mid.shape(), [2, 8, 8, 16]);
        let y = dec.forward(&mut g, &bound, &mid).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn stride_one_stages_keep_the_grid() {
        let mut store = ParamStore::new(9);
        let enc = ConvEncoder::new(&mut store, "e", 6, &[(4, 1), (2, 1)]);
        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![1, 16, 16, 6], 10);
        let y = enc.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(y.shape(), [1, 16, 16, 2]);
    }

    #[test]
    fn dense_bottleneck_identity_when_wide_enough() {
        // z ≥ h·w·c with identity-padded projections restores the input
        // exactly; the latent keeps its declared width.
        let (h, w, c, z) = (2, 2, 3, 16);
        let flat = h * w * c; // 12
        let mut store = ParamStore::new(11);
        let bott = DenseBottleneck::new(&mut store, "b", h, w, c, z);
        *store.tensor_mut(bott.narrow.w) = Tensor::from_fn(vec![flat, z], |i| {
            if i / z == i % z { 1.0 } else { 0.0 }
        });
        *store.tensor_mut(bott.restore.w) = Tensor::from_fn(vec![z, flat], |i| {
            if i / flat == i % flat { 1.0 } else { 0.0 }
        });

        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![2, h, w, c], 12);
        let (latent, restored) = bott.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(latent.shape(), [2, z]);
        assert_eq!(restored.shape(), x.shape());
        assert_eq!(restored.data(), x.data());
    }

    #[test]
    fn dense_bottleneck_latent_width_law() {
        let mut store = ParamStore::new(13);
        let bott = DenseBottleneck::new(&mut store, "b", 4, 4, 8, 5);
        let mut g = Eager;
        let bound = store.bind(&mut g, false).unwrap();
        let x = rand(vec![3, 4, 4, 8], 14);
        let (latent, restored) = bott.forward(&mut g, &bound, &x).unwrap();
        assert_eq!(latent.shape(), [3, 5]);
        assert_eq!(restored.shape(), [3, 4, 4, 8]);
    }
}

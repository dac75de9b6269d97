//! Finite-difference gradient verification for every block, at miniature
//! sizes (inputs no larger than 8×8). Each case runs the block's generic
//! forward twice: on the tape for analytic gradients and eagerly inside the
//! FD loop. The loss is the smooth scalar mean(y²), so central differences
//! are trustworthy everywhere.

use uadseg::blocks::{
    Bound, ConvDecoder, ConvEncoder, DenseBottleneck, MultiHeadAttention, ParamStore, PatchEmbed,
    PatchExpanding, PatchMerging, PatchUnembed, TokenGrid, TransformerLayer,
};
use uadseg::numerics::gradcheck::{check_fd, sample_coords, FdSettings};
use uadseg::numerics::{Eager, Graph, Rng, Tape, Tensor};

type R<T> = uadseg::numerics::Result<T>;

/// Bind `tensors` (input first, then parameters in registration order) and
/// return the bound leaves.
fn bind_all<G: Graph>(g: &mut G, tensors: &[Tensor], mark: bool) -> R<Vec<G::V>> {
    tensors
        .iter()
        .map(|t| {
            let t = if mark { t.clone().with_grad() } else { t.clone() };
            g.constant(t)
        })
        .collect()
}

fn mean_square<G: Graph>(g: &mut G, y: &G::V) -> R<G::V> {
    let sq = g.mul(y, y)?;
    g.mean_all(&sq)
}

fn rand(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform_in(-0.8, 0.8))
}

/// Expands to one FD test: builds the block in a fresh store, computes
/// analytic gradients on the tape, then replays the same generic forward
/// eagerly under coordinate nudges.
macro_rules! fd_case {
    ($test:ident, $blockty:ty, $input:expr, $build:expr,
     |$b:ident, $g:ident, $bound:ident, $x:ident| $body:expr) => {
        #[test]
        fn $test() {
            fn fwd<G: Graph>(
                $b: &$blockty,
                $g: &mut G,
                $bound: &Bound<G::V>,
                $x: &G::V,
            ) -> R<G::V> {
                $body
            }

            fn run<G: Graph>(
                g: &mut G,
                block: &$blockty,
                tensors: &[Tensor],
                mark: bool,
            ) -> R<(G::V, Vec<G::V>)> {
                let leaves = bind_all(g, tensors, mark)?;
                let bound = Bound::from_values(leaves[1..].to_vec());
                let y = fwd(block, g, &bound, &leaves[0])?;
                let loss = mean_square(g, &y)?;
                Ok((loss, leaves))
            }

            let mut store = ParamStore::new(77);
            let block: $blockty = ($build)(&mut store);
            let mut tensors: Vec<Tensor> = vec![$input];
            tensors.extend(store.iter().map(|(_, t)| t.clone()));

            let mut tape = Tape::new();
            let (loss, leaves) = run(&mut tape, &block, &tensors, true).unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let analytic: Vec<Tensor> = leaves
                .iter()
                .zip(&tensors)
                .map(|(id, t)| grads.take(*id, t.shape()).unwrap())
                .collect();

            let coords = sample_coords(&tensors, 6);
            let report = check_fd(&tensors, &analytic, &coords, FdSettings::default(), |work| {
                let (loss, _) = run(&mut Eager, &block, work, false)?;
                Ok(loss.item())
            })
            .unwrap();
            assert!(
                report.passed(),
                "{} FD failures: {:?}",
                stringify!($test),
                report.failures
            );
            assert!(report.checked >= tensors.len(), "too few coordinates checked");
        }
    };
}

fd_case!(
    fd_patch_embed,
    PatchEmbed,
    rand(vec![2, 8, 8, 1], 1),
    |s: &mut ParamStore| PatchEmbed::new(s, "e", 8, 8, 1, 4, 6),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_patch_unembed,
    PatchUnembed,
    rand(vec![2, 4, 6], 2),
    |s: &mut ParamStore| PatchUnembed::new(s, "u", 8, 8, 1, 4, 6),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_attention,
    MultiHeadAttention,
    rand(vec![2, 4, 6], 3),
    |s: &mut ParamStore| MultiHeadAttention::new(s, "a", 4, 6, 2),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_transformer_layer,
    TransformerLayer,
    rand(vec![1, 4, 6], 4),
    |s: &mut ParamStore| TransformerLayer::new(s, "l", 4, 6, 2, 4),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_patch_merging,
    PatchMerging,
    rand(vec![2, 16, 4], 5),
    |s: &mut ParamStore| PatchMerging::new(s, "m", TokenGrid { rows: 4, cols: 4, dim: 4 }),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_patch_expanding,
    PatchExpanding,
    rand(vec![2, 4, 8], 6),
    |s: &mut ParamStore| PatchExpanding::new(s, "x", TokenGrid { rows: 2, cols: 2, dim: 8 }),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_conv_encoder,
    ConvEncoder,
    rand(vec![1, 8, 8, 2], 7),
    |s: &mut ParamStore| ConvEncoder::new(s, "e", 2, &[(3, 2), (2, 2)]),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_conv_decoder,
    ConvDecoder,
    rand(vec![1, 2, 2, 3], 8),
    |s: &mut ParamStore| ConvDecoder::new(s, "d", 3, &[(2, 2), (1, 2)]),
    |b, g, bound, x| b.forward(g, bound, x)
);

fd_case!(
    fd_dense_bottleneck,
    DenseBottleneck,
    rand(vec![2, 4, 4, 2], 9),
    |s: &mut ParamStore| DenseBottleneck::new(s, "b", 4, 4, 2, 5),
    |b, g, bound, x| {
        // Exercise both heads: fold the latent into the loss alongside the
        // restored map.
        let (z, restored) = b.forward(g, bound, x)?;
        let zterm = mean_square(g, &z)?;
        let rterm = mean_square(g, &restored)?;
        g.add(&zterm, &rterm)
    }
);

/// Every parameter of a transformer layer should receive gradient from a
/// generic input (nothing structurally unreachable).
#[test]
fn all_layer_parameters_reach_the_loss() {
    let mut store = ParamStore::new(5);
    let layer = TransformerLayer::new(&mut store, "l", 4, 6, 2, 4);
    let x = rand(vec![2, 4, 6], 11);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true).unwrap();
    let xv = tape.constant(x.with_grad()).unwrap();
    let y = layer.forward(&mut tape, &bound, &xv).unwrap();
    let loss = mean_square(&mut tape, &y).unwrap();
    let grads = tape.backward(loss).unwrap();

    for (id, (name, t)) in store.ids().zip(store.iter()) {
        let g = grads
            .get(*bound.get(id))
            .unwrap_or_else(|| panic!("parameter {name} missing from gradients"));
        let nonzero = g.iter().any(|&v| v != 0.0);
        assert!(nonzero, "parameter {name} ({:?}) got an all-zero gradient", t.shape());
    }
}

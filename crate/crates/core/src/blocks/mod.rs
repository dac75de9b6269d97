//! Network building blocks, written against [`crate::numerics::Graph`] so
//! every forward runs identically under eager inference and the training
//! tape. Parameters live in a [`ParamStore`] and are initialized from
//! name-keyed RNG streams: a block gets the same weights wherever it appears.

mod attention;
mod conv;
mod embed;
mod hierarchy;
mod param;

pub use attention::{MultiHeadAttention, TransformerLayer};
pub use conv::{mirror_schedule, ConvDecoder, ConvEncoder, DenseBottleneck, CONV_KERNEL, CONV_SLOPE};
pub use embed::{patchify_map, unpatchify_map, PatchEmbed, PatchUnembed, TokenGrid};
pub use hierarchy::{PatchExpanding, PatchMerging};
pub use param::{Bound, LayerNorm, Linear, ParamId, ParamStore};

//! Synthetic data generation and on-disk dataset handling.

mod io;
mod phantom;

pub use io::{
    build_splits, load_sample, load_split, read_uads, save_sample, write_uads_f32,
    write_uads_u8, DataError, Dtype, Sample, SplitCounts, SPLIT_NAMES,
};
pub use phantom::{
    brain_mask, closing3, generate_phantom, normalize, resize_bilinear, Phantom, PhantomParams,
};

//! The seven autoencoder architectures, assembled from [`crate::blocks`]:
//! three flat transformers (b_tae, and dc_tae/sc_tae with a conv middle),
//! two hierarchical ones (h_tae, h_tae_s with a skip fusion), and the two
//! convolutional baselines (ae_dense, ae_spatial).

mod checkpoint;
mod config;
mod model;

pub use config::{Architecture, ModelConfig, Preset};
pub use model::{Model, ModelError};

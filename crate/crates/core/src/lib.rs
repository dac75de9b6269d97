//! Reconstruction-based unsupervised anomaly segmentation for brain images.
//!
//! The crate trains autoencoders on healthy images only and flags anomalies
//! at test time as regions with large reconstruction residuals. It ships:
//!
//! * [`numerics`] — a minimal differentiable f32 tensor substrate with a
//!   Wengert-tape reverse-mode engine and the Adam optimizer,
//! * [`blocks`] — patch embedding, multi-head self-attention, transformer
//!   layers, hierarchical patch merging/expanding and conv encoder/decoder
//!   stacks,
//! * [`models`] — five transformer autoencoders (B_TAE, DC_TAE, SC_TAE,
//!   H_TAE, H_TAE_S) plus two convolutional baselines (AE dense/spatial),
//! * [`pipeline`] — the L1 training loop and the residual → median filter →
//!   percentile-squash segmentation pipeline,
//! * [`metrics`] — DSC, best-threshold DSC, AUROC, AUPRC and SSIM,
//! * [`data`] — a deterministic synthetic brain-phantom generator and the
//!   on-disk dataset format.
//!
//! Everything is plain single-threaded CPU code. All stochastic choices go
//! through one splittable seeded generator, so a fixed seed reproduces
//! datasets, training runs and reports bit for bit.

pub mod blocks;
pub mod data;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod pipeline;

pub use data::{Sample, SplitCounts};
pub use metrics::{evaluate, MetricReport};
pub use models::{Architecture, Model, ModelConfig, Preset};
pub use numerics::{AdamState, Gradients, Rng, Tape, Tensor};
pub use pipeline::{segment, train, SegmentationResult, TrainConfig};

//! Hierarchical classification adjustment (HCA) for imbalanced regression.
//!
//! A continuous target range is quantized into ordered classes, a stack of
//! progressively coarser classifiers is trained over fixed feature vectors,
//! and the stack is merged back into a single regression prediction — either
//! learning-free (summing probabilities or log-probabilities across levels)
//! or by distilling the whole stack into one head with a range-preserving
//! max-pool alignment.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`quantize`]: bin edges, nested hierarchies, transition matrices
//! - [`labels`]: one-hot and Gaussian-smoothed targets, LDS sample weights
//! - [`heads`]: linear / two-layer softmax heads, losses, gradients, stage-1 training
//! - [`adjust`]: learning-free ensemble adjustment and decoding
//! - [`distill`]: pooling alignments, KL distillation, stage-2 training
//! - [`metrics`]: MAE / RMSE / balanced MAE, shot slicing, consistency rates
//! - [`data`]: synthetic dataset generation, subset protocols, CSV I/O
//! - [`checkpoint`]: text checkpoints for hierarchies and trained heads

pub mod adjust;
pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod error;
pub mod heads;
pub mod labels;
pub mod metrics;
pub mod quantize;
pub mod util;

pub use error::{Error, Result};

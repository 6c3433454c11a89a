//! Structured filter pruning during training.
//!
//! Conv kernels are summarized by their pseudo-norms; an l1/l2 ratio penalty
//! on the vector of those norms concentrates the norm mass in a few filters,
//! and an end-of-epoch pass zeroes and freezes the filters holding a
//! negligible share of it. [`models::compact`] then deletes them for real.

pub mod data;
mod error;
pub mod models;
pub mod ops;
pub mod pruner;
pub mod regularizer;
pub mod report;
mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use models::{build_lenet, build_vgg11, ArchitectureSpec, Network};
pub use pruner::{KernelMask, PruneConfig, PruneEvent, PruneScope};
pub use regularizer::{KernelNormVector, RegMode, RegularizerConfig};
pub use tensor::Tensor;
pub use train::{EpochMetrics, TrainConfig, Trainer};

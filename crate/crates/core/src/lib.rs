//! Binary neural networks trained with a contrastive mutual-information
//! objective between binary and full-precision activations.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: float and bit-packed tensors, xnor-popcount GEMM.
//! - [`net`]: binary layers with latent weights, batch norm, STE backward.
//! - [`cmim`]: critic, memory bank, per-layer NCE loss and layer weighting.
//! - [`loss`]: softmax cross-entropy.
//! - [`mi`]: exact discrete mutual information and representation diagnostics.
//! - [`train`]: SGD with momentum, cosine schedule, epochs, checkpoints.
//! - [`data`]: IDX / CIFAR-binary loaders, augmentation, batching.

#[cfg(feature = "cmim")]
pub mod cmim;
pub mod data;
pub mod error;
pub mod loss;
pub mod mi;
pub mod net;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorCategory, Result};

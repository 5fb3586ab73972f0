//! Exact discrete mutual information and representation diagnostics.

mod correlation;
mod info;

pub use correlation::{class_mean_correlation, correlation_matrix, CorrelationMatrix};
pub use info::{
    binarized_activation_mi, entropy_decomposition, mutual_information, nats_to_bits, verify_nce_bound,
    BoundCheck, EntropyDecomposition, JointHistogram,
};

use crate::error::{Error, Result};
use crate::net::{pool_embedding, Network, SignMode};
use crate::tensor::{FpTensor, Real};

/// Eval-mode binary activations of layer `k` (1-based), pooled per channel
/// for conv layers. Rows are samples.
pub fn binary_embeddings<T: Real>(net: &Network<T>, x: &FpTensor<T>, k: usize) -> Result<FpTensor<T>> {
    let (_, cache) = net.forward_eval(x)?;
    let layer = cache
        .layer(k)
        .filter(|_| k < net.depth())
        .ok_or_else(|| Error::Config(format!("layer {k} has no binary activation")))?;
    pool_embedding(&SignMode::Hard.apply(&layer.a_fp), net.layers()[k - 1].spec())
}

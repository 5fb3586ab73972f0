//! Dense float tensors, bit-packed ±1 tensors and the xnor-popcount kernels
//! that connect them.

mod bits;
mod fp;
mod xnor;

pub use bits::{sign_binarize, BitRow, BitTensor};
pub use fp::{gemm, FpTensor, MatView, Real};
pub use xnor::{xnor_dot, xnor_matmul, xnor_matmul_nt};
